"""Diffraction-pattern preprocessing: beam-stop masking, ring-center finding
with a circle Hough transform, polar resampling and angular band signals."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.signal import fftconvolve

from ._workers import default_workers
from .errors import BandOutsideRange, CenterOutsideImage, DimensionMismatch, NoEdges, ValidationError
from .io import VideoStack


def threshold_band(image, lo: float, hi: float) -> np.ndarray:
    """Boolean map of pixels with ``lo < value < hi`` (open interval)."""
    if not lo < hi:
        raise ValidationError("need lo < hi")
    a = np.asarray(image, dtype=np.float64)
    return (a > lo) & (a < hi)


def beam_stop_mask(image, hi: float, lo: float = -math.inf) -> np.ndarray:
    """Largest connected low-intensity region that touches the image border.

    Pixels in ``(lo, hi)`` are candidates; returns an all-False mask when no
    candidate region reaches the border.
    """
    band = threshold_band(image, lo, hi)
    lab, n = ndimage.label(band)
    if n == 0:
        return np.zeros(band.shape, dtype=bool)
    border = np.unique(np.concatenate([lab[0], lab[-1], lab[:, 0], lab[:, -1]]))
    border = border[border > 0]
    if border.size == 0:
        return np.zeros(band.shape, dtype=bool)
    sizes = ndimage.sum_labels(band, lab, border)
    return lab == border[int(np.argmax(sizes))]


def canny_edges(image, sigma: float = 2.0, low: float = 0.05, high: float = 0.15, normalize: bool = True) -> np.ndarray:
    """Canny edge map.

    With ``normalize`` the image is first scaled to [0, 1], so ``low`` and
    ``high`` are fractions of the full intensity range.
    """
    from skimage.feature import canny

    if not sigma > 0:
        raise ValidationError("sigma must be > 0")
    if not 0 < low < high:
        raise ValidationError("need 0 < low < high")
    a = np.asarray(image, dtype=np.float64)
    if normalize:
        span = a.max() - a.min()
        a = (a - a.min()) / span if span > 0 else np.zeros_like(a)
    return canny(a, sigma=sigma, low_threshold=low, high_threshold=high)


@dataclass
class CircleEstimate:
    x: float
    y: float
    r: float
    votes: int


def _ring_kernel(r: float, half: float) -> np.ndarray:
    """Offsets at distance in ``[r - half, r + half)`` as a 0/1 kernel."""
    R = int(math.ceil(r + half))
    yy, xx = np.mgrid[-R : R + 1, -R : R + 1]
    d = np.hypot(xx, yy)
    return ((d >= r - half) & (d < r + half)).astype(np.float64)


def hough_accumulator(edges, radii, bin_size: float = 1.0) -> np.ndarray:
    """Votes ``acc[i, y, x]``: edge pixels within ``bin_size / 2`` of distance
    ``radii[i]`` from center ``(x, y)``."""
    e = np.asarray(edges, dtype=np.float64)
    acc = np.empty((len(radii),) + e.shape)
    for i, r in enumerate(radii):
        acc[i] = np.rint(fftconvolve(e, _ring_kernel(r, bin_size / 2), mode="same"))
    return acc


def hough_circle(edges, r_min: float, r_max: float, bin_size: float = 1.0, refine: bool = True) -> CircleEstimate:
    """Strongest circle among edge pixels, radius searched in ``[r_min, r_max]``.

    Centers are binned at 1 px, radii at ``bin_size``.  Ties go to the
    smallest radius, then the first center in row-major order.  With
    ``refine`` the integer argmax is replaced by the vote-weighted centroid of
    its 3 x 3 x 3 neighborhood.
    """
    e = np.asarray(edges).astype(bool)
    if not e.any():
        raise NoEdges("edge map is empty")
    if r_min < 1 or r_max < r_min or not bin_size > 0:
        raise ValidationError("need 1 <= r_min <= r_max and bin_size > 0")
    radii = np.arange(r_min, r_max + 1e-9, bin_size)
    acc = hough_accumulator(e, radii, bin_size)
    i, y, x = np.unravel_index(int(np.argmax(acc)), acc.shape)
    votes = int(acc[i, y, x])
    if not refine:
        return CircleEstimate(float(x), float(y), float(radii[i]), votes)
    sl = tuple(slice(max(c - 1, 0), c + 2) for c in (i, y, x))
    w = acc[sl]
    ii, yy, xx = np.meshgrid(*[np.arange(s.start, s.start + n) for s, n in zip(sl, w.shape)], indexing="ij")
    tot = w.sum()
    r_ref = float(np.interp((w * ii).sum() / tot, np.arange(len(radii)), radii))
    return CircleEstimate(float((w * xx).sum() / tot), float((w * yy).sum() / tot), r_ref, votes)


@dataclass
class PolarImage:
    """Pattern binned onto (radius, angle); ``values`` is NaN where no source
    pixel contributed (``coverage == 0``)."""

    values: np.ndarray
    coverage: np.ndarray
    dr: float
    dtheta: float
    center: tuple[float, float]

    @property
    def sums(self) -> np.ndarray:
        return np.where(self.coverage > 0, self.values, 0.0) * self.coverage


def _check_dtheta(dtheta):
    n = 360.0 / dtheta
    if not dtheta > 0 or abs(n - round(n)) > 1e-9:
        raise ValidationError("dtheta must divide 360")
    return int(round(n))


def to_polar(image, center, dr: float = 1.0, dtheta: float = 1.0, mask=None, r_max: float | None = None) -> PolarImage:
    """Scatter every unmasked pixel into bin ``(floor(dist/dr), floor(angle/dtheta))``.

    ``center`` is ``(x, y)``; angles run from +x towards +y (down the rows)
    in degrees on [0, 360).  Pixels beyond ``r_max`` are dropped.
    """
    a = np.asarray(image, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionMismatch("image must be 2-D")
    K, L = a.shape
    cx, cy = map(float, center)
    if not (0 <= cx < L and 0 <= cy < K):
        raise CenterOutsideImage(f"center ({cx}, {cy}) lies outside the {L} x {K} image")
    if not dr > 0:
        raise ValidationError("dr must be > 0")
    n_theta = _check_dtheta(dtheta)
    rows, cols = np.mgrid[0:K, 0:L]
    dist = np.hypot(cols - cx, rows - cy)
    ang = np.degrees(np.arctan2(rows - cy, cols - cx)) % 360.0
    keep = np.ones(a.shape, dtype=bool)
    if mask is not None:
        m = np.asarray(getattr(mask, "bits", mask)).astype(bool)
        if m.shape != a.shape:
            raise DimensionMismatch("mask shape differs from the image")
        keep &= ~m
    if r_max is None:
        r_max = float(dist.max())
    keep &= dist <= r_max
    n_r = int(math.floor(r_max / dr)) + 1
    rb = np.floor(dist[keep] / dr).astype(np.int64)
    tb = np.floor(ang[keep] / dtheta).astype(np.int64) % n_theta
    idx = rb * n_theta + tb
    sums = np.bincount(idx, weights=a[keep], minlength=n_r * n_theta).reshape(n_r, n_theta)
    cov = np.bincount(idx, minlength=n_r * n_theta).reshape(n_r, n_theta)
    with np.errstate(invalid="ignore", divide="ignore"):
        vals = np.where(cov > 0, sums / np.maximum(cov, 1), np.nan)
    return PolarImage(vals, cov, float(dr), float(dtheta), (cx, cy))


@dataclass
class BandSignal:
    values: np.ndarray
    filled: np.ndarray  # True where the angle had no coverage and was interpolated
    r0: float
    width: float


def band_signal(polar: PolarImage, r0: float, width: float) -> BandSignal:
    """Coverage-weighted mean over radial bins whose lower edge lies in
    ``[r0, r0 + width)``, one value per angular bin.

    Angles without coverage take the mean of the nearest covered angle on
    each side and are flagged in ``filled``.
    """
    if not width > 0 or r0 < 0:
        raise BandOutsideRange("need r0 >= 0 and width > 0")
    n_r = polar.values.shape[0]
    lo = int(math.ceil(r0 / polar.dr - 1e-9))
    hi = int(math.ceil((r0 + width) / polar.dr - 1e-9))
    if hi > n_r or hi <= lo:
        raise BandOutsideRange(f"band [{r0}, {r0 + width}) outside polar range [0, {n_r * polar.dr})")
    cov = polar.coverage[lo:hi].sum(axis=0)
    sums = polar.sums[lo:hi].sum(axis=0)
    have = cov > 0
    if not have.any():
        raise BandOutsideRange("band has no coverage at any angle")
    vals = np.where(have, sums / np.maximum(cov, 1), 0.0)
    filled = ~have
    if filled.any():
        idx = np.flatnonzero(have)
        for j in np.flatnonzero(filled):
            pos = np.searchsorted(idx, j)
            # cyclic neighbors: idx[-1] wraps for pos == 0
            vals[j] = 0.5 * (vals[idx[pos - 1]] + vals[idx[pos % len(idx)]])
    return BandSignal(vals, filled, float(r0), float(width))


@dataclass
class PolarConfig:
    """Per-frame pipeline: (Hough alignment) -> polar binning -> band signal."""

    r_min: float = 15.0
    r_max: float = 30.0
    band_r0: float = 40.0
    band_width: float = 4.0
    dr: float = 1.0
    dtheta: float = 1.0
    canny_sigma: float = 2.0
    canny_low: float = 0.05
    canny_high: float = 0.15
    hough_bin: float = 1.0
    align: bool = True
    center: tuple[float, float] | None = None  # fixed center when align is off
    mask_threshold: float | None = None  # derive a beam-stop mask per frame below this


def frame_center(image, cfg: PolarConfig) -> CircleEstimate:
    edges = canny_edges(image, cfg.canny_sigma, cfg.canny_low, cfg.canny_high)
    return hough_circle(edges, cfg.r_min, cfg.r_max, cfg.hough_bin)


def frame_signal(image, cfg: PolarConfig, mask=None):
    """(band signal, center, polar image) for one pattern."""
    image = np.asarray(image, dtype=np.float64)
    if cfg.align:
        est = frame_center(image, cfg)
        center = (est.x, est.y)
    elif cfg.center is not None:
        center = tuple(cfg.center)
    else:
        center = ((image.shape[1] - 1) / 2, (image.shape[0] - 1) / 2)
    if mask is None and cfg.mask_threshold is not None:
        mask = beam_stop_mask(image, cfg.mask_threshold)
    pol = to_polar(image, center, cfg.dr, cfg.dtheta, mask, r_max=cfg.band_r0 + cfg.band_width + cfg.dr)
    return band_signal(pol, cfg.band_r0, cfg.band_width), center, pol


@dataclass
class SignalMatrix:
    signals: np.ndarray  # T x (360 / dtheta)
    centers: np.ndarray  # T x 2 (x, y)
    filled: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0, bool))


def pattern_sequence_to_signals(stack: VideoStack, cfg: PolarConfig = PolarConfig(), mask=None, workers=None) -> SignalMatrix:
    """One band signal per frame; frames may be processed on worker threads,
    the output order is always frame order."""
    frames = np.asarray(getattr(stack, "frames", stack), dtype=np.float64)
    workers = default_workers() if workers is None else workers

    def one(t):
        sig, c, _ = frame_signal(frames[t], cfg, mask)
        return sig, c

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            res = list(pool.map(one, range(len(frames))))
    else:
        res = [one(t) for t in range(len(frames))]
    return SignalMatrix(
        np.array([s.values for s, _ in res]),
        np.array([c for _, c in res], dtype=np.float64),
        np.array([s.filled for s, _ in res]),
    )


def standardize(signals, baseline: int) -> np.ndarray:
    """Z-score every column against its first ``baseline`` rows, giving the
    unit-variance, zero-mean pre-change streams the detectors assume."""
    S = np.asarray(signals, dtype=np.float64)
    if not 2 <= baseline <= len(S):
        raise ValidationError("baseline must cover 2 .. T rows")
    ref = S[:baseline]
    mu = ref.mean(axis=0)
    sd = ref.std(axis=0, ddof=1)
    # columns that only carry float32 rounding count as constant
    flat = sd <= 8 * np.finfo(np.float32).eps * np.maximum(np.abs(mu), 1.0)
    sd = np.where(flat, 1.0, sd)
    return (S - mu) / sd
