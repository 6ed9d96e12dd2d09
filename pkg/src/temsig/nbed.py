"""Diffraction-disk registration and strain mapping for scanning nanobeam data.

Disk positions come from a hybrid Fourier correlation between a reference
disk and each pattern, refined to subpixel precision by a local
matrix-multiply DFT upsampling followed by a 3-point parabola fit.  Measured
g-vectors relate to the reference set through ``g = F^-T g_ref`` and the
resulting deformation gradient is split into rotation and symmetric strain.

Coordinates are ``(x, y) = (column, row)`` throughout.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.optimize import linear_sum_assignment
from scipy.stats import ncx2

from .errors import (
    DegenerateGeometry,
    DimensionMismatch,
    NonPositiveDeterminant,
    PeakOnBorderWarning,
    RadiusTooLarge,
    TemsigError,
    TooFewPeaks,
    ValidationError,
)

DISK_BLUR = 1.0
BULLSEYE_LOW = 0.2


# ---------------------------------------------------------------------------
# disk templates


def _annulus_weights(radius: float, kind: str, ring_count: int):
    """(outer radius, intensity) pairs describing a flat or bullseye disk."""
    if kind == "flat" or ring_count <= 1:
        return [(radius, 1.0)]
    if kind != "bullseye":
        raise ValidationError(f"unknown disk kind {kind!r}")
    edges = [radius * (j + 1) / ring_count for j in range(ring_count)]
    return [(e, 1.0 if j % 2 == 0 else BULLSEYE_LOW) for j, e in enumerate(edges)]


def stamp_disk(img, x, y, radius, kind="flat", ring_count=3, amplitude=1.0, blur=DISK_BLUR):
    """Add a Gaussian-softened disk centered at ``(x, y)`` into ``img`` in place.

    A pixel receives the probability that a Gaussian of width ``blur``
    centered on it lands inside the disk, i.e. the hard disk convolved with
    the Gaussian, evaluated exactly through the noncentral chi-square CDF.
    """
    K, L = img.shape
    reach = radius + 6 * blur
    r0, r1 = max(int(math.floor(y - reach)), 0), min(int(math.ceil(y + reach)) + 1, K)
    c0, c1 = max(int(math.floor(x - reach)), 0), min(int(math.ceil(x + reach)) + 1, L)
    if r0 >= r1 or c0 >= c1:
        return img
    rows, cols = np.mgrid[r0:r1, c0:c1]
    nc = ((cols - x) ** 2 + (rows - y) ** 2) / blur**2
    prev = np.zeros(nc.shape)
    acc = np.zeros(nc.shape)
    for edge, level in _annulus_weights(radius, kind, ring_count):
        cdf = ncx2.cdf(edge**2 / blur**2, 2, nc)
        acc += level * (cdf - prev)
        prev = cdf
    img[r0:r1, c0:c1] += amplitude * acc
    return img


def soft_disk(shape, x, y, radius, kind="flat", ring_count=3, blur=DISK_BLUR) -> np.ndarray:
    return stamp_disk(np.zeros(shape), x, y, radius, kind, ring_count, 1.0, blur)


@dataclass(frozen=True)
class ReferenceDisk:
    """Template disk centered at ``(L // 2, K // 2)``."""

    image: np.ndarray = field(repr=False)
    kind: str
    radius: float


def make_reference_disk(radius, kind="flat", K=64, L=64, ring_count=3, image=None) -> ReferenceDisk:
    """Simulated flat or bullseye template, or a measured one passed as ``image``."""
    if kind == "measured":
        img = np.asarray(image, dtype=np.float64)
        if img.ndim != 2 or not np.isfinite(img).all() or (img < 0).any():
            raise ValidationError("measured reference must be a finite non-negative 2-D image")
        return ReferenceDisk(img, kind, float(radius))
    if radius >= min(K, L) / 2:
        raise RadiusTooLarge(f"radius {radius} does not fit a {K}x{L} template")
    img = soft_disk((K, L), float(L // 2), float(K // 2), radius, kind, ring_count)
    return ReferenceDisk(img, kind, float(radius))


# ---------------------------------------------------------------------------
# correlation


def sobel_filter(image) -> np.ndarray:
    """Gradient magnitude from the standard 3x3 Sobel pair.

    Borders replicate the edge pixel, so a constant image maps to zero.
    """
    img = np.asarray(image, dtype=np.float64)
    if min(img.shape) < 3:
        raise DimensionMismatch("sobel_filter needs at least 3x3 pixels")
    gx = ndimage.sobel(img, axis=1, mode="nearest")
    gy = ndimage.sobel(img, axis=0, mode="nearest")
    return np.hypot(gx, gy)


def _pad_to(a, shape):
    out = np.zeros(shape)
    out[: a.shape[0], : a.shape[1]] = a
    return out


def hybrid_correlate(f, g, gamma: float = 0.5, eps: float = 1e-12) -> np.ndarray:
    """Circular hybrid correlation ``ifft(conj(F f) F g / |conj(F f) F g|**gamma)``.

    ``gamma=0`` is plain cross-correlation, ``gamma=1`` phase correlation.  If
    ``g`` is ``f`` translated by ``(dx, dy)`` the peak sits at index
    ``[dy, dx]`` (modulo the image size).  Spectral bins whose magnitude is
    below ``eps * max`` are zeroed.
    """
    if not 0.0 <= gamma <= 1.0:
        raise ValidationError("gamma must lie in [0, 1]")
    f = np.asarray(f, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if f.ndim != 2 or g.ndim != 2:
        raise DimensionMismatch("hybrid_correlate expects 2-D images")
    if f.shape != g.shape:
        shape = (max(f.shape[0], g.shape[0]), max(f.shape[1], g.shape[1]))
        f, g = _pad_to(f, shape), _pad_to(g, shape)
    cross = np.conj(np.fft.fft2(f)) * np.fft.fft2(g)
    mag = np.abs(cross)
    keep = mag >= eps * mag.max() if mag.max() > 0 else np.zeros(mag.shape, bool)
    out = np.zeros_like(cross)
    if gamma == 0.0:
        out[keep] = cross[keep]
    else:
        out[keep] = cross[keep] / mag[keep] ** gamma
    return np.fft.ifft2(out).real


@dataclass(frozen=True)
class DiskPosition:
    x: float
    y: float
    peak_value: float
    curvature: tuple[float, float] = (float("nan"), float("nan"))
    refined: bool = True


def upsampled_patch(corr, x0: float, y0: float, kappa: int, half_width: float = 1.5) -> tuple[np.ndarray, np.ndarray]:
    """Band-limited interpolation of ``corr`` on a local grid around (x0, y0).

    Evaluates the inverse DFT of ``corr``'s spectrum at spacing ``1/kappa``
    over ``[-half_width, half_width]`` in each axis using two small matrix
    products.  Returns (offsets, patch) with ``patch[i, j]`` at
    ``(y0 + offsets[i], x0 + offsets[j])``.
    """
    K, L = corr.shape
    n = int(round(2 * half_width * kappa)) + 1
    offs = (np.arange(n) - (n - 1) / 2) / kappa
    spec = np.fft.fft2(corr)
    er = np.exp(2j * np.pi * np.outer(y0 + offs, np.fft.fftfreq(K)))
    ec = np.exp(2j * np.pi * np.outer(np.fft.fftfreq(L), x0 + offs))
    patch = (er @ spec @ ec).real / (K * L)
    return offs, patch


def _parabola(a, b, c):
    den = a - 2 * b + c
    if den >= 0:
        return 0.0, den
    return 0.5 * (a - c) / den, den


def subpixel_refine(corr, peak, kappa: int = 16) -> DiskPosition:
    """Refine integer peak ``(x, y)`` of ``corr`` by local DFT upsampling and a
    separable 3-point parabola fit.

    Peaks on the outermost row or column are returned unrefined with
    ``refined=False`` and a :class:`PeakOnBorderWarning`.
    """
    corr = np.asarray(corr, dtype=np.float64)
    K, L = corr.shape
    x0, y0 = int(peak[0]), int(peak[1])
    if kappa < 2:
        raise ValidationError("kappa must be >= 2")
    if x0 <= 0 or y0 <= 0 or x0 >= L - 1 or y0 >= K - 1:
        warnings.warn(f"peak ({x0}, {y0}) on the border; refinement skipped", PeakOnBorderWarning)
        return DiskPosition(float(x0), float(y0), float(corr[y0, x0]), refined=False)
    offs, patch = upsampled_patch(corr, x0, y0, kappa)
    i, j = np.unravel_index(np.argmax(patch), patch.shape)
    step = offs[1] - offs[0]
    dy = dx = 0.0
    cy = cx = float("nan")
    if 0 < i < len(offs) - 1:
        dy, cy = _parabola(patch[i - 1, j], patch[i, j], patch[i + 1, j])
    if 0 < j < len(offs) - 1:
        dx, cx = _parabola(patch[i, j - 1], patch[i, j], patch[i, j + 1])
    x = x0 + offs[j] + dx * step
    y = y0 + offs[i] + dy * step
    return DiskPosition(float(x), float(y), float(patch[i, j]), (cx / step**2, cy / step**2), True)


def peak_fwhm(corr, peak=None) -> float:
    """Mean full width at half maximum of a correlation peak along x and y.

    Half maximum is taken midway between the peak and the surface median;
    crossings are linearly interpolated.
    """
    corr = np.asarray(corr, dtype=np.float64)
    if peak is None:
        yy, xx = np.unravel_index(np.argmax(corr), corr.shape)
    else:
        xx, yy = peak
    top = corr[yy, xx]
    half = 0.5 * (top + np.median(corr))

    def width(profile, c):
        n = len(profile)
        w = 0.0
        for direction in (-1, 1):
            k = c
            while True:
                nxt = (k + direction) % n
                if profile[nxt] < half:
                    a, b = profile[k], profile[nxt]
                    w += abs(k - c) + (a - half) / (a - b)
                    break
                k = nxt
                if k == c:
                    return float(n)
        return w

    return 0.5 * (width(corr[yy, :], xx) + width(corr[:, xx], yy))


# ---------------------------------------------------------------------------
# registration


@dataclass
class GVectorSet:
    center: DiskPosition
    disks: list  # DiskPosition of every non-central disk
    gvecs: np.ndarray  # n x 2, (x, y) relative to the center disk
    labels: np.ndarray  # index into the reference set, -1 when unpaired


def _reference_on_origin(ref_img, shape):
    K, L = shape
    rk, rl = ref_img.shape
    if rk > K or rl > L:
        raise DimensionMismatch("reference disk is larger than the pattern")
    canvas = np.zeros(shape)
    top, left = K // 2 - rk // 2, L // 2 - rl // 2
    canvas[top : top + rk, left : left + rl] = ref_img
    return np.roll(canvas, (-(K // 2), -(L // 2)), axis=(0, 1))


def correlation_surface(pattern, reference: ReferenceDisk, gamma=0.5, prefilter="sobel") -> np.ndarray:
    """Correlation whose maxima sit on disk centers in pattern coordinates."""
    pattern = np.asarray(pattern, dtype=np.float64)
    ref = reference.image
    if prefilter == "sobel":
        pattern, ref = sobel_filter(pattern), sobel_filter(ref)
    elif prefilter not in (None, "none"):
        raise ValidationError(f"unknown prefilter {prefilter!r}")
    return hybrid_correlate(_reference_on_origin(ref, pattern.shape), pattern, gamma)


def find_peaks(corr, count: int, min_separation: float, min_ratio: float = 0.2) -> list[tuple[int, int]]:
    """Up to ``count`` 8-neighbour local maxima, strongest first, at least
    ``min_separation`` apart and above ``min_ratio`` of the global maximum."""
    local = corr == ndimage.maximum_filter(corr, size=3, mode="wrap")
    top = corr.max()
    ys, xs = np.nonzero(local & (corr > min_ratio * top))
    order = np.argsort(-corr[ys, xs], kind="stable")
    chosen: list[tuple[int, int]] = []
    for k in order:
        x, y = int(xs[k]), int(ys[k])
        if all(math.hypot(x - cx, y - cy) >= min_separation for cx, cy in chosen):
            chosen.append((x, y))
            if len(chosen) == count:
                break
    return chosen


def _centered_crop(img, x0: int, y0: int, half: int, wrap: bool) -> np.ndarray:
    """``(2 half + 1)`` square of ``img`` centered on pixel ``(x0, y0)``;
    out-of-range pixels wrap around or read as zero."""
    K, L = img.shape
    ys = np.arange(y0 - half, y0 + half + 1)
    xs = np.arange(x0 - half, x0 + half + 1)
    if wrap:
        return img[np.ix_(ys % K, xs % L)]
    out = np.zeros((len(ys), len(xs)))
    oky, okx = (ys >= 0) & (ys < K), (xs >= 0) & (xs < L)
    out[np.ix_(oky, okx)] = img[np.ix_(ys[oky], xs[okx])]
    return out


def local_refine(pattern, ref, peak, half: int, gamma: float, kappa: int = 16) -> DiskPosition:
    """Re-register one disk against the template inside a window around ``peak``.

    ``pattern`` and ``ref`` are already prefiltered; the window is zero-padded
    to twice its size so the correlation does not wrap.  Neighbouring disks
    outside the window no longer enter the spectral normalization, which
    removes their pull on the peak when ``gamma > 0``.
    """
    x0, y0 = int(peak[0]), int(peak[1])
    win = _centered_crop(pattern, x0, y0, half, wrap=True)
    tpl = _centered_crop(ref, ref.shape[1] // 2, ref.shape[0] // 2, half, wrap=False)
    n = 2 * half + 1
    N = 2 * n
    corr = hybrid_correlate(_reference_on_origin(tpl, (N, N)), np.pad(win, (0, n)), gamma)
    corr = np.fft.fftshift(corr)
    i, j = np.unravel_index(np.argmax(corr), corr.shape)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PeakOnBorderWarning)
        p = subpixel_refine(corr, (j, i), kappa)
    off = x0 - half - N // 2, y0 - half - N // 2
    return DiskPosition(p.x + off[0], p.y + off[1], p.peak_value, p.curvature, p.refined)


def register_disks(
    pattern,
    reference: ReferenceDisk,
    expected: int,
    gamma: float = 0.5,
    prefilter: str = "sobel",
    kappa: int = 16,
    min_ratio: float = 0.2,
    refine: str = "local",
) -> GVectorSet:
    """Locate ``expected`` disks (central disk included) in ``pattern``.

    Peaks are picked on the whole-pattern correlation.  With
    ``refine="global"`` each is refined on that surface; with ``"local"``
    (default) each disk is re-correlated inside a window of half-width
    ``ceil(radius + 4 blur)`` around its peak, which avoids a bias of up to
    ~0.1 px from neighbouring disks when ``gamma > 0``.  The strongest peak is
    taken as the central disk; the others become g-vectors relative to it.
    """
    if expected < 1:
        raise ValidationError("expected must be >= 1")
    if refine not in ("local", "global"):
        raise ValidationError(f"unknown refine mode {refine!r}")
    pattern = np.asarray(pattern, dtype=np.float64)
    ref = reference.image
    if prefilter == "sobel":
        pattern, ref = sobel_filter(pattern), sobel_filter(ref)
    elif prefilter not in (None, "none"):
        raise ValidationError(f"unknown prefilter {prefilter!r}")
    corr = hybrid_correlate(_reference_on_origin(ref, pattern.shape), pattern, gamma)
    peaks = find_peaks(corr, expected, 1.5 * reference.radius, min_ratio)
    if len(peaks) < expected:
        raise TooFewPeaks(f"found {len(peaks)} disks, expected {expected}")
    if refine == "local":
        half = int(math.ceil(reference.radius + 4 * DISK_BLUR))
        found = [local_refine(pattern, ref, pk, half, gamma, kappa) for pk in peaks]
    else:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", PeakOnBorderWarning)
            found = [subpixel_refine(corr, pk, kappa) for pk in peaks]
    center, others = found[0], found[1:]
    g = np.array([[d.x - center.x, d.y - center.y] for d in others]).reshape(-1, 2)
    return GVectorSet(center, others, g, np.full(len(others), -1))


def pair_gvectors(gset: GVectorSet, g_ref) -> GVectorSet:
    """Label measured vectors with their nearest reference vector (optimal
    one-to-one assignment)."""
    g_ref = np.asarray(g_ref, dtype=np.float64).reshape(-1, 2)
    cost = np.linalg.norm(gset.gvecs[:, None, :] - g_ref[None, :, :], axis=2)
    rows, cols = linear_sum_assignment(cost)
    labels = np.full(len(gset.gvecs), -1)
    labels[rows] = cols
    return GVectorSet(gset.center, gset.disks, gset.gvecs, labels)


def deformation_gradient(gset: GVectorSet | np.ndarray, g_ref) -> np.ndarray:
    """Least-squares ``A`` with ``g_meas ~ A g_ref``, returned as ``F = A^-T``.

    ``gset`` may be a paired :class:`GVectorSet` or an ``n x 2`` array
    already ordered like ``g_ref``.
    """
    g_ref = np.asarray(g_ref, dtype=np.float64).reshape(-1, 2)
    if isinstance(gset, GVectorSet):
        ok = gset.labels >= 0
        meas, ref = gset.gvecs[ok], g_ref[gset.labels[ok]]
    else:
        meas, ref = np.asarray(gset, dtype=np.float64).reshape(-1, 2), g_ref
    if len(meas) != len(ref):
        raise DimensionMismatch("measured and reference vector counts differ")
    if len(ref) < 2 or np.linalg.matrix_rank(ref, tol=1e-9 * max(np.abs(ref).max(), 1.0)) < 2:
        raise DegenerateGeometry("need two linearly independent g-vectors")
    At, *_ = np.linalg.lstsq(ref, meas, rcond=None)
    A = At.T
    if abs(np.linalg.det(A)) < 1e-12:
        raise DegenerateGeometry("measured g-vectors are collinear")
    return np.linalg.inv(A).T


def rotation_matrix(angle_deg: float) -> np.ndarray:
    a = math.radians(angle_deg)
    return np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])


def polar_decompose(F) -> tuple[float, np.ndarray]:
    """Closed-form 2x2 polar decomposition ``F = R U``.

    Returns the rotation angle of ``R`` in degrees and the strain ``U - I``.
    """
    F = np.asarray(F, dtype=np.float64)
    if np.linalg.det(F) <= 0:
        raise NonPositiveDeterminant("polar decomposition needs det F > 0")
    phi = math.atan2(F[1, 0] - F[0, 1], F[0, 0] + F[1, 1])
    c, s = math.cos(phi), math.sin(phi)
    R = np.array([[c, -s], [s, c]])
    U = R.T @ F
    U = 0.5 * (U + U.T)
    return math.degrees(phi), U - np.eye(2)


# ---------------------------------------------------------------------------
# strain maps


@dataclass
class DeformationField:
    F: np.ndarray  # P x Q x 2 x 2, NaN where registration failed
    strain: np.ndarray  # P x Q x 2 x 2 symmetric
    rotation: np.ndarray  # P x Q degrees
    ok: np.ndarray  # P x Q bool
    failures: list = field(default_factory=list)

    @property
    def exx(self):
        return self.strain[..., 0, 0]

    @property
    def eyy(self):
        return self.strain[..., 1, 1]

    @property
    def exy(self):
        return self.strain[..., 0, 1]


@dataclass
class StrainConfig:
    expected: int = 5
    gamma: float = 0.5
    prefilter: str = "sobel"
    kappa: int = 16
    disk_radius: float = 5.0
    disk_kind: str = "flat"
    ring_count: int = 3
    min_ratio: float = 0.2
    reference_point: tuple[int, int] | None = (0, 0)
    g_ref: list | None = None
    refine: str = "local"


def reference_gvectors(pattern, reference: ReferenceDisk, cfg: StrainConfig) -> np.ndarray:
    """g-vectors of a designated reference pattern, sorted by polar angle."""
    gs = register_disks(pattern, reference, cfg.expected, cfg.gamma, cfg.prefilter, cfg.kappa, cfg.min_ratio, cfg.refine)
    ang = np.arctan2(gs.gvecs[:, 1], gs.gvecs[:, 0])
    return gs.gvecs[np.argsort(ang, kind="stable")]


def strain_map(grid, cfg: StrainConfig | None = None, reference: ReferenceDisk | None = None, workers: int = 1) -> DeformationField:
    """Register every scan point and convert its g-vectors to F, rotation and strain.

    Reference vectors come from ``cfg.g_ref`` when given, otherwise from the
    pattern at ``cfg.reference_point``.  Failed points are reported in
    ``failures`` and left as NaN.
    """
    cfg = cfg or StrainConfig()
    patterns = grid.patterns if hasattr(grid, "patterns") else np.asarray(grid)
    P, Q, K, L = patterns.shape
    if reference is None:
        reference = make_reference_disk(cfg.disk_radius, cfg.disk_kind, K, L, cfg.ring_count)
    if cfg.g_ref is not None:
        g_ref = np.asarray(cfg.g_ref, dtype=np.float64).reshape(-1, 2)
    else:
        p0, q0 = cfg.reference_point
        g_ref = reference_gvectors(patterns[p0, q0], reference, cfg)

    def one(idx):
        i, j = divmod(idx, Q)
        try:
            gs = register_disks(patterns[i, j], reference, cfg.expected, cfg.gamma, cfg.prefilter, cfg.kappa, cfg.min_ratio, cfg.refine)
            gs = pair_gvectors(gs, g_ref)
            F = deformation_gradient(gs, g_ref)
            rot, strain = polar_decompose(F)
            return F, rot, strain, None
        except TemsigError as exc:
            return None, None, None, {"p": i, "q": j, "error": type(exc).__name__, "message": str(exc)}

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(one, range(P * Q)))
    else:
        results = [one(k) for k in range(P * Q)]

    F = np.full((P, Q, 2, 2), np.nan)
    strain = np.full((P, Q, 2, 2), np.nan)
    rotation = np.full((P, Q), np.nan)
    ok = np.zeros((P, Q), dtype=bool)
    failures = []
    for k, (Fk, rk, sk, err) in enumerate(results):
        i, j = divmod(k, Q)
        if err is not None:
            failures.append(err)
            continue
        F[i, j], rotation[i, j], strain[i, j], ok[i, j] = Fk, rk, sk, True
    return DeformationField(F, strain, rotation, ok, failures)
