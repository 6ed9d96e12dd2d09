"""Corrosion onset labeling from forward intensity differences.

A pixel switches to "corroded" the first time its frame-to-frame increase
exceeds a high quantile of all increases; the switch is irreversible.  Labels
are then cleaned per frame by a neighborhood majority vote, and summarized as
area fraction, onset-time and front-velocity maps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .denoise import FilterConfig, _shifted
from .errors import EmptyInput, TooFewFrames, ValidationError
from .io import VideoStack


@dataclass
class LabelVideo:
    """T x M x N labels in {0, 1} (1 = corroded)."""

    labels: np.ndarray

    def __post_init__(self):
        lab = np.asarray(self.labels)
        if lab.ndim != 3:
            raise ValidationError("labels must be T x M x N")
        if lab.size and not np.isin(lab, (0, 1)).all():
            raise ValidationError("labels must be 0 or 1")
        self.labels = lab.astype(np.uint8)

    @property
    def shape(self):
        return self.labels.shape

    def is_monotone(self) -> bool:
        return bool((np.diff(self.labels.astype(np.int8), axis=0) >= 0).all())

    def to_stack(self, frame_interval=None, pixel_size=None) -> VideoStack:
        return VideoStack(self.labels.astype(np.float32), frame_interval, pixel_size)


@dataclass
class OnsetState:
    S: np.ndarray  # T-1 x M x N bool
    threshold: float | np.ndarray
    q: float | None = None


@dataclass
class CorrosionStats:
    area_fraction: np.ndarray
    onset_time: np.ndarray  # inf where never corroded
    velocity: np.ndarray  # nm/s with pixel_size, else px/s


def _frames(stack) -> np.ndarray:
    return np.asarray(getattr(stack, "frames", stack), dtype=np.float64)


def forward_difference(stack) -> np.ndarray:
    """``X[t+1] - X[t]`` for every pixel, shape (T-1, M, N)."""
    X = _frames(stack)
    if X.ndim != 3 or X.shape[0] < 2:
        raise TooFewFrames("need at least two frames")
    return X[1:] - X[:-1]


def _nearest_rank(sorted_vals: np.ndarray, q: float):
    n = sorted_vals.shape[-1]
    return sorted_vals[..., max(math.ceil(q * n) - 1, 0)]


def quantile_threshold(diff, q: float = 0.99, per_frame: bool = False):
    """Nearest-rank ``q`` quantile of the differences (index ``ceil(q n) - 1``
    of the ascending sort).  ``per_frame`` gives one threshold per difference
    frame instead of one for the whole video."""
    if not 0 < q < 1:
        raise ValidationError("q must be in (0, 1)")
    d = np.asarray(diff, dtype=np.float64)
    if d.size == 0:
        raise EmptyInput("no differences to threshold")
    if per_frame:
        flat = np.sort(d.reshape(d.shape[0], -1), axis=1)
        return _nearest_rank(flat, q)
    return float(_nearest_rank(np.sort(d.ravel()), q))


def label_onset(diff, threshold) -> tuple[OnsetState, LabelVideo]:
    """Switch events ``S = diff > threshold`` and cumulative labels.

    ``labels[0]`` is all zero and ``labels[t] = S[0] | ... | S[t-1]``, so a
    jump between frames t and t+1 shows up at frame t+1.
    """
    d = np.asarray(diff, dtype=np.float64)
    thr = np.asarray(threshold, dtype=np.float64)
    if not np.isfinite(thr).all():
        raise ValidationError("threshold must be finite")
    if thr.ndim == 1:
        thr = thr[:, None, None]
    S = d > thr
    labels = np.zeros((d.shape[0] + 1,) + d.shape[1:], dtype=np.uint8)
    labels[1:] = np.logical_or.accumulate(S, axis=0)
    return OnsetState(S, threshold if np.ndim(threshold) == 0 else np.asarray(threshold)), LabelVideo(labels)


def majority_smooth(labels, radius: int = 1, fraction: float = 0.5, metric: str = "chebyshev") -> LabelVideo:
    """Flip a label when strictly more than ``fraction`` of its in-bounds
    neighbors (center excluded) disagree.  One synchronous pass per frame."""
    if not 0 < fraction < 1:
        raise ValidationError("fraction must be in (0, 1)")
    lab = np.asarray(getattr(labels, "labels", labels)).astype(np.int32)
    squeeze = lab.ndim == 2
    if squeeze:
        lab = lab[None]
    cfg = FilterConfig(radius, metric)
    ones = np.zeros_like(lab)
    count = np.zeros(lab.shape[-2:], dtype=np.int32)
    for dy, dx in cfg.offsets():
        if dy == 0 and dx == 0:
            continue
        dst, src = _shifted(lab, dy, dx)
        ones[dst] += lab[src]
        count[dst[1:]] += 1
    opposite = np.where(lab == 1, count - ones, ones)
    out = np.where(opposite > fraction * count, 1 - lab, lab)
    return LabelVideo(out[0][None] if squeeze else out)


def remonotonize(labels) -> LabelVideo:
    """Cumulative OR over time, restoring irreversibility after smoothing."""
    lab = np.asarray(getattr(labels, "labels", labels)).astype(bool)
    return LabelVideo(np.logical_or.accumulate(lab, axis=0))


def _axis_gradient(tau: np.ndarray, axis: int) -> np.ndarray:
    """Central difference along ``axis`` using only finite neighbors, falling
    back to one-sided differences; 0 where no finite neighbor exists."""
    t = np.moveaxis(tau, axis, 0)
    nxt = np.full_like(t, np.inf)
    prv = np.full_like(t, np.inf)
    nxt[:-1] = t[1:]
    prv[1:] = t[:-1]
    fn, fp = np.isfinite(nxt), np.isfinite(prv)
    with np.errstate(invalid="ignore"):
        g = np.where(fn & fp, (nxt - prv) / 2, np.where(fn, nxt - t, np.where(fp, t - prv, 0.0)))
    return np.moveaxis(g, 0, axis)


def onset_map(labels, frame_interval: float = 1.0) -> np.ndarray:
    lab = np.asarray(getattr(labels, "labels", labels)).astype(bool)
    anyc = lab.any(axis=0)
    return np.where(anyc, lab.argmax(axis=0) * float(frame_interval), np.inf)


def front_velocity(onset_time: np.ndarray, pixel_size: float | None = None) -> np.ndarray:
    """``pixel_size / |grad tau|``; 0 where the gradient is below 1e-9 or the
    pixel never corrodes."""
    tau = np.asarray(onset_time, dtype=np.float64)
    finite = np.isfinite(tau)
    gy = _axis_gradient(tau, 0)
    gx = _axis_gradient(tau, 1)
    norm = np.hypot(gx, gy)
    ok = finite & (norm >= 1e-9)
    v = np.zeros_like(tau)
    v[ok] = (1.0 if pixel_size is None else float(pixel_size)) / norm[ok]
    return v


def corrosion_stats(labels, frame_interval: float | None = 1.0, pixel_size: float | None = None) -> CorrosionStats:
    """Area fraction per frame, onset time per pixel and front velocity.

    Labels that are not monotone in time are re-monotonized first.
    """
    lab = LabelVideo(np.asarray(getattr(labels, "labels", labels)))
    if not lab.is_monotone():
        lab = remonotonize(lab)
    dt = 1.0 if frame_interval is None else float(frame_interval)
    area = lab.labels.reshape(lab.shape[0], -1).mean(axis=1)
    tau = onset_map(lab, dt)
    return CorrosionStats(area, tau, front_velocity(tau, pixel_size))


@dataclass
class SegmentConfig:
    quantile: float = 0.99
    per_frame: bool = False
    smooth_radius: int = 1
    smooth_fraction: float = 0.5
    smooth: bool = True


def segment_stack(stack: VideoStack, cfg: SegmentConfig = SegmentConfig()):
    """difference -> quantile threshold -> onset labels -> majority smoothing.

    Returns (raw labels, smoothed labels, stats, onset state).
    """
    diff = forward_difference(stack)
    thr = quantile_threshold(diff, cfg.quantile, cfg.per_frame)
    state, raw = label_onset(diff, thr)
    state.q = cfg.quantile
    smoothed = majority_smooth(raw, cfg.smooth_radius, cfg.smooth_fraction) if cfg.smooth else raw
    stats = corrosion_stats(smoothed, stack.frame_interval, stack.pixel_size)
    return raw, smoothed, stats, state
