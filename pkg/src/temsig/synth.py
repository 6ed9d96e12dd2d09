"""Ground-truth synthetic data generators.

Every generator takes a :class:`SynthSpec` and returns its data together with
an exact truth record.  Randomness comes from Philox (counter-based) streams
derived from ``(seed, unit...)`` through :func:`substream`, so each frame,
scan point or Monte Carlo run owns an independent, reproducible stream no
matter how work is scheduled.

Substream layout (``spawn_key`` tuples):

* corrosion video: ``(0, t)`` pixel noise of frame t, ``(1,)`` drift phase,
  ``(2,)`` brightness flicker, ``(3,)`` base texture
* ring pattern: ``(0,)`` pixel noise; ring sequences use ``(10, t)`` per frame
  and ``(11,)`` for the center jitter
* sparse stream: ``(0,)`` support draw, ``(1,)`` samples
* nbed grid: ``(p, q)`` per scan point
* disk pair: ``(0,)`` noise, ``(1,)`` background
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import (
    DiskOutsideImage,
    DiskOverlapWarning,
    FrontExceedsFrameWarning,
    SpotOutsideImage,
    SupportTooLarge,
    ValidationError,
)
from .io import DiffractionGrid, MaskImage, VideoStack
from .nbed import soft_disk, stamp_disk


def substream(seed: int, *unit: int) -> np.random.Generator:
    """Independent Philox generator for work unit ``unit`` under ``seed``."""
    ss = np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=tuple(int(u) for u in unit))
    return np.random.Generator(np.random.Philox(ss))


DEFAULTS: dict[str, dict[str, Any]] = {
    "corrosion_video": dict(
        M=64, N=64, T=100, center=None, rho0=0.0, velocity=0.5, step=1.0, base=0.0,
        texture=0.0, sigma=0.0, drift_amplitude=0.0, drift_cycles=1.5, flicker=0.0,
        frame_interval=1.0, pixel_size=None,
    ),
    "ring_pattern": dict(
        K=128, L=128, center=None, center_intensity=1.0, center_sigma=3.0,
        ring_radii=[22.0, 38.0], ring_intensities=[0.6, 0.4], ring_width=1.5,
        spots=[], spot_sigma=1.2, needle=None, background=0.0, sigma=0.0,
        frames=1, spot_onset=0, center_jitter=0.0,
    ),
    "sparse_stream": dict(d=100, length=200, nu=100, support=5, mu=1.0),
    "nbed_grid": dict(
        P=8, Q=8, K=96, L=96, g_ref=[[24.0, 3.0], [-3.0, 24.0], [-24.0, -3.0], [3.0, -24.0]],
        field={"kind": "constant", "F": [[1.0, 0.0], [0.0, 1.0]]},
        disk_kind="flat", ring_count=3, disk_radius=5.0, center_intensity=1.0,
        disk_intensity=0.6, sigma=0.0, background=0.0, background_scale=40.0,
        scan_step=None,
    ),
    "disk_pair": dict(
        K=64, L=64, radius=6.0, kind="flat", ring_count=3, shift=[0.25, 0.0],
        sigma=0.0, background=0.0, background_scale=24.0,
    ),
}


@dataclass(frozen=True)
class SynthSpec:
    """Generator kind, its parameters (unset keys take defaults) and a seed."""

    kind: str
    parameters: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in DEFAULTS:
            raise ValidationError(f"unknown synth kind {self.kind!r}; choose from {sorted(DEFAULTS)}")
        unknown = set(self.parameters) - set(DEFAULTS[self.kind])
        if unknown:
            raise ValidationError(f"unknown {self.kind} parameters: {sorted(unknown)}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValidationError("seed must be a 64-bit unsigned integer")

    def resolved(self) -> dict:
        out = dict(DEFAULTS[self.kind])
        out.update(self.parameters)
        return out

    def to_json(self) -> dict:
        return {"kind": self.kind, "parameters": self.resolved(), "seed": int(self.seed)}

    @classmethod
    def from_json(cls, obj: dict) -> "SynthSpec":
        unknown = set(obj) - {"kind", "parameters", "seed"}
        if unknown:
            raise ValidationError(f"unknown SynthSpec keys: {sorted(unknown)}")
        return cls(obj["kind"], dict(obj.get("parameters", {})), int(obj.get("seed", 0)))


def _spec(spec, kind) -> tuple[dict, int]:
    if isinstance(spec, dict):
        spec = SynthSpec(kind, spec)
    if spec.kind != kind:
        raise ValidationError(f"expected a {kind} spec, got {spec.kind}")
    return spec.resolved(), int(spec.seed)


# ---------------------------------------------------------------------------
# corrosion video


@dataclass
class CorrosionTruth:
    corroded: np.ndarray  # T x M x N bool
    onset_frame: np.ndarray  # M x N float, first corroded frame, inf if never
    onset_time: np.ndarray  # M x N float seconds, inf if never
    drift: np.ndarray  # T, additive global brightness (zero mean)
    base: np.ndarray  # M x N clean frame before corrosion
    center: tuple[float, float]
    params: dict


def gen_corrosion_video(spec) -> tuple[VideoStack, CorrosionTruth]:
    """Disk-shaped corrosion front growing from a seed point.

    Pixel (m, n) is corroded at frame t iff ``rho0 + velocity*t >= dist``;
    the frame is ``base + step*corroded + drift(t) + flicker(t) + noise``.
    ``velocity`` is in pixels per frame.
    """
    p, seed = _spec(spec, "corrosion_video")
    M, N, T = int(p["M"]), int(p["N"]), int(p["T"])
    if min(M, N, T) < 1:
        raise ValidationError("M, N, T must be >= 1")
    if p["step"] <= 0:
        raise ValidationError("step must be > 0 (corroded pixels are brighter)")
    cx, cy = p["center"] if p["center"] is not None else ((N - 1) / 2 + 0.25, (M - 1) / 2 + 0.25)
    rows, cols = np.mgrid[0:M, 0:N]
    dist = np.hypot(cols - cx, rows - cy)
    radius = p["rho0"] + p["velocity"] * np.arange(T, dtype=np.float64)
    if radius[-1] > math.hypot(M, N):
        warnings.warn("corrosion front exceeds the frame diagonal", FrontExceedsFrameWarning)
    corroded = radius[:, None, None] >= dist[None]
    any_c = corroded.any(axis=0)
    onset_frame = np.where(any_c, corroded.argmax(axis=0).astype(np.float64), np.inf)

    base = np.full((M, N), float(p["base"]))
    if p["texture"]:
        from scipy.ndimage import gaussian_filter

        tex = gaussian_filter(substream(seed, 3).standard_normal((M, N)), 2.0, mode="wrap")
        base = base + p["texture"] * tex / max(tex.std(), 1e-12)

    t = np.arange(T, dtype=np.float64)
    drift = np.zeros(T)
    if p["drift_amplitude"]:
        phase = substream(seed, 1).uniform(0, 2 * np.pi)
        drift = p["drift_amplitude"] * np.sin(2 * np.pi * p["drift_cycles"] * t / T + phase)
        drift = drift - drift.mean()
    flicker = np.zeros(T)
    if p["flicker"]:
        flicker = p["flicker"] * substream(seed, 2).standard_normal(T)

    frames = np.empty((T, M, N), dtype=np.float64)
    for k in range(T):
        frame = base + p["step"] * corroded[k] + drift[k] + flicker[k]
        if p["sigma"]:
            frame = frame + p["sigma"] * substream(seed, 0, k).standard_normal((M, N))
        frames[k] = frame
    dt = float(p["frame_interval"]) if p["frame_interval"] is not None else 1.0
    truth = CorrosionTruth(
        corroded=corroded,
        onset_frame=onset_frame,
        onset_time=onset_frame * dt,
        drift=drift + flicker,
        base=base,
        center=(float(cx), float(cy)),
        params=p,
    )
    return VideoStack(frames, p["frame_interval"], p["pixel_size"]), truth


# ---------------------------------------------------------------------------
# ring patterns


@dataclass
class RingTruth:
    center: tuple[float, float]  # (x, y)
    radii: list
    spots: list  # [(r, theta_deg, intensity), ...]
    mask: np.ndarray  # bool, True = beam stop
    centers: np.ndarray | None = None  # per-frame (x, y) for sequences


def needle_mask(shape, center, angle_deg: float, width: float) -> np.ndarray:
    """Beam-stop shadow: a strip of ``width`` px from near the center to the border."""
    K, L = shape
    cx, cy = center
    rows, cols = np.mgrid[0:K, 0:L]
    ux, uy = math.cos(math.radians(angle_deg)), math.sin(math.radians(angle_deg))
    along = (cols - cx) * ux + (rows - cy) * uy
    across = np.abs(-(cols - cx) * uy + (rows - cy) * ux)
    return (along > 6.0) & (across <= width / 2)


def _ring_image(p: dict, center, spots, rng) -> tuple[np.ndarray, np.ndarray]:
    K, L = int(p["K"]), int(p["L"])
    cx, cy = center
    rows, cols = np.mgrid[0:K, 0:L]
    r = np.hypot(cols - cx, rows - cy)
    img = np.full((K, L), float(p["background"]))
    if p["center_intensity"]:
        img += p["center_intensity"] * np.exp(-0.5 * (r / p["center_sigma"]) ** 2)
    for rad, amp in zip(p["ring_radii"], p["ring_intensities"]):
        img += amp * np.exp(-0.5 * ((r - rad) / p["ring_width"]) ** 2)
    for sr, sth, samp in spots:
        sx = cx + sr * math.cos(math.radians(sth))
        sy = cy + sr * math.sin(math.radians(sth))
        if not (0 <= sx <= L - 1 and 0 <= sy <= K - 1):
            raise SpotOutsideImage(f"spot at r={sr}, theta={sth} falls outside the image")
        img += samp * np.exp(-0.5 * ((cols - sx) ** 2 + (rows - sy) ** 2) / p["spot_sigma"] ** 2)
    if p["sigma"]:
        img = img + p["sigma"] * rng.standard_normal((K, L))
    mask = np.zeros((K, L), dtype=bool)
    if p["needle"]:
        mask = needle_mask((K, L), center, float(p["needle"]["angle"]), float(p["needle"]["width"]))
        img[mask] = 0.0
    return img, mask


def _default_center(p):
    return p["center"] if p["center"] is not None else (p["L"] / 2 - 0.3, p["K"] / 2 + 0.4)


def gen_ring_pattern(spec) -> tuple[np.ndarray, RingTruth]:
    """Bright center + Gaussian-profile rings + sparse spots, beam stop zeroed.

    Spots are ``(r, theta_deg, intensity)`` with theta measured from +x
    (columns) towards +y (rows).
    """
    p, seed = _spec(spec, "ring_pattern")
    center = tuple(float(c) for c in _default_center(p))
    spots = [tuple(map(float, s)) for s in p["spots"]]
    img, mask = _ring_image(p, center, spots, substream(seed, 0))
    return img, RingTruth(center, list(p["ring_radii"]), spots, mask)


def gen_ring_sequence(spec) -> tuple[VideoStack, RingTruth]:
    """``frames`` ring patterns; spots appear from frame ``spot_onset`` on and
    the pattern center wanders uniformly within +-``center_jitter`` px."""
    p, seed = _spec(spec, "ring_pattern")
    T = int(p["frames"])
    c0 = np.array(_default_center(p), dtype=np.float64)
    jitter = np.zeros((T, 2))
    if p["center_jitter"]:
        jitter = substream(seed, 11).uniform(-p["center_jitter"], p["center_jitter"], (T, 2))
    spots = [tuple(map(float, s)) for s in p["spots"]]
    frames, centers, mask0 = [], c0 + jitter, None
    for t in range(T):
        active = spots if t >= int(p["spot_onset"]) else []
        img, mask = _ring_image(p, tuple(centers[t]), active, substream(seed, 10, t))
        frames.append(img)
        mask0 = mask if mask0 is None else mask0
    truth = RingTruth(tuple(c0), list(p["ring_radii"]), spots, mask0, centers=centers)
    return VideoStack(np.array(frames)), truth


# ---------------------------------------------------------------------------
# sparse streams


@dataclass
class StreamTruth:
    nu: int
    theta: np.ndarray


def gen_sparse_stream(spec) -> tuple[np.ndarray, StreamTruth]:
    """Rows ``0..nu-1`` are N(0, I_d); rows from ``nu`` on are N(theta, I_d)
    with ``support`` coordinates of theta equal to ``mu``."""
    p, seed = _spec(spec, "sparse_stream")
    d, length, nu, s = int(p["d"]), int(p["length"]), int(p["nu"]), int(p["support"])
    if s > d:
        raise SupportTooLarge(f"support {s} exceeds dimension {d}")
    theta = np.zeros(d)
    idx = substream(seed, 0).choice(d, size=s, replace=False)
    theta[np.sort(idx)] = p["mu"]
    X = substream(seed, 1).standard_normal((length, d))
    if nu < length:
        X[nu:] += theta
    return X, StreamTruth(nu, theta)


# ---------------------------------------------------------------------------
# diffraction disks


def _smooth_background(shape, scale, rng) -> np.ndarray:
    """Unit-amplitude low-frequency field: a few random plane waves with
    wavelength >= ``scale`` px."""
    K, L = shape
    rows, cols = np.mgrid[0:K, 0:L].astype(np.float64)
    out = np.zeros(shape)
    for _ in range(3):
        ang = rng.uniform(0, 2 * np.pi)
        wl = scale * rng.uniform(1.0, 2.0)
        ph = rng.uniform(0, 2 * np.pi)
        out += np.cos(2 * np.pi * (cols * math.cos(ang) + rows * math.sin(ang)) / wl + ph)
    return 0.5 + out / 6.0


def disk_image(shape, centers, radius, kind="flat", ring_count=3, intensities=None) -> np.ndarray:
    """Sum of softened disks (flat or bullseye) at fractional ``(x, y)`` centers."""
    img = np.zeros(shape)
    intensities = [1.0] * len(centers) if intensities is None else intensities
    for (x, y), amp in zip(centers, intensities):
        stamp_disk(img, x, y, radius, kind, ring_count, amp)
    return img


def field_F(field_spec: dict, P: int, Q: int) -> np.ndarray:
    """Per-point deformation gradients for a constant, ramp or blob field."""
    kind = field_spec.get("kind", "constant")
    F = np.zeros((P, Q, 2, 2))
    pp, qq = np.mgrid[0:P, 0:Q].astype(np.float64)
    if kind == "constant":
        F[:] = np.asarray(field_spec.get("F", np.eye(2)), dtype=np.float64)
        return F
    if kind == "ramp":
        # F = I + (p/(P-1)) * E  with E = strain + skew(rotation)
        E = np.asarray(field_spec.get("strain", [[0.01, 0.0], [0.0, 0.0]]), dtype=np.float64)
        w = pp / max(P - 1, 1)
    elif kind == "blob":
        E = np.asarray(field_spec.get("strain", [[0.01, 0.0], [0.0, 0.01]]), dtype=np.float64)
        cp, cq = field_spec.get("center", ((P - 1) / 2, (Q - 1) / 2))
        sig = float(field_spec.get("sigma", max(P, Q) / 6))
        w = np.exp(-0.5 * ((pp - cp) ** 2 + (qq - cq) ** 2) / sig**2)
    else:
        raise ValidationError(f"unknown field kind {kind!r}")
    rot = math.radians(float(field_spec.get("rotation_deg", 0.0)))
    for i in range(P):
        for j in range(Q):
            a = rot * w[i, j]
            R = np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])
            F[i, j] = R @ (np.eye(2) + w[i, j] * E)
    return F


@dataclass
class NbedTruth:
    F: np.ndarray  # P x Q x 2 x 2
    positions: np.ndarray  # P x Q x (n+1) x 2 disk centers (x, y); index 0 = central disk
    g_ref: np.ndarray  # n x 2
    pattern_center: tuple[float, float]


def _pattern_center(K, L):
    return (float(L // 2), float(K // 2))


def gen_nbed_grid(spec) -> tuple[DiffractionGrid, NbedTruth]:
    """Scan grid of disk patterns; disks sit at ``center + F^-T g_ref``."""
    p, seed = _spec(spec, "nbed_grid")
    P, Q, K, L = (int(p[k]) for k in "PQKL")
    g_ref = np.asarray(p["g_ref"], dtype=np.float64).reshape(-1, 2)
    R = float(p["disk_radius"])
    F = field_F(p["field"], P, Q)
    c = np.array(_pattern_center(K, L))
    pats = np.empty((P, Q, K, L))
    pos = np.empty((P, Q, len(g_ref) + 1, 2))
    gl = np.linalg.norm(g_ref, axis=1)
    if (gl < 2 * R).any():
        warnings.warn("diffracted disks overlap the central disk", DiskOverlapWarning)
    for i in range(P):
        for j in range(Q):
            g = g_ref @ np.linalg.inv(F[i, j])  # rows: (F^-T g)^T = g^T F^-1
            centers = np.vstack([c, c + g])
            xs, ys = centers[:, 0], centers[:, 1]
            if ((xs - R < 0) | (ys - R < 0) | (xs + R > L - 1) | (ys + R > K - 1)).any():
                raise DiskOutsideImage(f"a disk at scan point ({i},{j}) leaves the pattern")
            pos[i, j] = centers
            amps = [p["center_intensity"]] + [p["disk_intensity"]] * len(g)
            img = disk_image((K, L), centers, R, p["disk_kind"], int(p["ring_count"]), amps)
            rng = substream(seed, i, j)
            if p["background"]:
                img += p["background"] * _smooth_background((K, L), p["background_scale"], rng)
            if p["sigma"]:
                img += p["sigma"] * rng.standard_normal((K, L))
            pats[i, j] = np.maximum(img, 0.0)
    return DiffractionGrid(pats, p["scan_step"]), NbedTruth(F, pos, g_ref, tuple(c))


@dataclass
class DiskPairTruth:
    shift: tuple[float, float]  # (dx, dy) of the pattern disk relative to the reference
    center: tuple[float, float]


def gen_disk_pair(spec) -> tuple[np.ndarray, np.ndarray, DiskPairTruth]:
    """Reference disk at the pattern center and a copy shifted by ``shift``.

    Noise and low-frequency background (if any) are applied to the shifted
    pattern only; the reference stays clean, as a simulated template would.
    """
    p, seed = _spec(spec, "disk_pair")
    K, L = int(p["K"]), int(p["L"])
    c = _pattern_center(K, L)
    dx, dy = (float(v) for v in p["shift"])
    ref = soft_disk((K, L), c[0], c[1], p["radius"], p["kind"], int(p["ring_count"]))
    pat = soft_disk((K, L), c[0] + dx, c[1] + dy, p["radius"], p["kind"], int(p["ring_count"]))
    if p["background"]:
        pat = pat + p["background"] * _smooth_background((K, L), p["background_scale"], substream(seed, 1))
    if p["sigma"]:
        pat = pat + p["sigma"] * substream(seed, 0).standard_normal((K, L))
    return ref, pat, DiskPairTruth((dx, dy), c)


GENERATORS = {
    "corrosion_video": gen_corrosion_video,
    "ring_pattern": gen_ring_pattern,
    "sparse_stream": gen_sparse_stream,
    "nbed_grid": gen_nbed_grid,
    "disk_pair": gen_disk_pair,
}


def generate(spec: SynthSpec):
    """Dispatch ``spec`` to its generator."""
    if spec.kind == "ring_pattern" and int(spec.resolved()["frames"]) > 1:
        return gen_ring_sequence(spec)
    return GENERATORS[spec.kind](spec)


def mask_from_truth(truth: RingTruth) -> MaskImage:
    return MaskImage(truth.mask)
