"""Brightness drift correction and spatial smoothing of video stacks.

The brightness series is the per-frame mean intensity.  Slow instrument
drift is either removed outright (``to_mean``) or separated from frame-to-
frame flicker with a natural cubic smoothing spline whose penalty is picked
by k-fold cross-validation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, sparse
from scipy.interpolate import CubicSpline

from .errors import LengthMismatch, SingularSystem, TooFewPoints, ValidationError
from .io import VideoStack

DEFAULT_LAMBDA_GRID = tuple(np.logspace(-3, 3, 13))
MODES = ("to_mean", "remove_trend", "to_trend")


@dataclass
class BrightnessSeries:
    values: np.ndarray
    frame_interval: float | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1:
            raise ValidationError("brightness series must be one-dimensional")
        if not np.isfinite(self.values).all():
            raise ValidationError("brightness series must be finite")

    def __len__(self):
        return len(self.values)


def frame_brightness(stack: VideoStack) -> BrightnessSeries:
    """Mean intensity of every frame, accumulated in float64."""
    frames = np.asarray(stack.frames, dtype=np.float64)
    return BrightnessSeries(frames.reshape(len(frames), -1).mean(axis=1), stack.frame_interval)


# ---------------------------------------------------------------------------
# smoothing spline


def _reinsch_system(x: np.ndarray):
    """Banded pieces of the natural-spline penalty on knots ``x``.

    Returns ``Q`` (n x n-2, sparse) and the tridiagonal ``R`` ((n-2) x (n-2))
    so that the roughness of the interpolating natural spline through values
    ``g`` is ``g' Q R^-1 Q' g``.
    """
    h = np.diff(x)
    n = len(x)
    j = np.arange(n - 2)
    rows = np.concatenate([j, j + 1, j + 2])
    cols = np.concatenate([j, j, j])
    vals = np.concatenate([1 / h[:-1], -1 / h[:-1] - 1 / h[1:], 1 / h[1:]])
    Q = sparse.csc_matrix((vals, (rows, cols)), shape=(n, n - 2))
    R = sparse.diags(
        [h[1:-1] / 6, (h[:-1] + h[1:]) / 3, h[1:-1] / 6], [-1, 0, 1], shape=(n - 2, n - 2)
    )
    return Q, R


def smooth_values(x, y, lam: float) -> np.ndarray:
    """Fitted values at ``x`` of the natural cubic smoothing spline minimizing
    ``sum (y - g)^2 + lam * int g''^2``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = len(x)
    if n < 3 or lam == 0:
        return y.copy()
    Q, R = _reinsch_system(x)
    A = (R + lam * (Q.T @ Q)).tocsc()
    # symmetric pentadiagonal: upper banded storage for solveh_banded
    ab = np.zeros((3, n - 2))
    ab[2] = A.diagonal(0)
    ab[1, 1:] = A.diagonal(1)
    ab[0, 2:] = A.diagonal(2)
    try:
        gamma = linalg.solveh_banded(ab, Q.T @ y)
    except linalg.LinAlgError as exc:
        raise SingularSystem(f"smoothing system is singular for lambda={lam}") from exc
    return y - lam * (Q @ gamma)


class _NaturalSpline:
    """Natural cubic interpolant, extended linearly beyond the end knots."""

    def __init__(self, x, g):
        self.x = np.asarray(x, dtype=np.float64)
        self.cs = CubicSpline(self.x, g, bc_type="natural") if len(self.x) >= 2 else None
        self.g = np.asarray(g, dtype=np.float64)

    def __call__(self, t):
        t = np.asarray(t, dtype=np.float64)
        if self.cs is None:
            return np.full(t.shape, self.g[0])
        out = self.cs(t)
        x0, x1 = self.x[0], self.x[-1]
        lo, hi = t < x0, t > x1
        if lo.any():
            out[lo] = self.cs(x0) + self.cs(x0, 1) * (t[lo] - x0)
        if hi.any():
            out[hi] = self.cs(x1) + self.cs(x1, 1) * (t[hi] - x1)
        return out


@dataclass
class SplineFit:
    """Natural cubic smoothing spline on frame indices ``0 .. T-1``.

    ``coefficients`` has shape (4, T-1): per-interval cubic coefficients in
    descending powers of ``t - knots[i]``.
    """

    knots: np.ndarray
    coefficients: np.ndarray
    lam: float
    cv_score: float
    fitted: np.ndarray
    lambda_grid: np.ndarray = field(default_factory=lambda: np.zeros(0))
    cv_scores: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __call__(self, t):
        return _NaturalSpline(self.knots, self.fitted)(t)


def fold_assignment(n: int, folds: int, seed: int | None = None) -> np.ndarray:
    """Fold index per point: interleaved (``i mod k``) or, with ``seed``, a
    random balanced partition."""
    base = np.arange(n) % folds
    if seed is None:
        return base
    return np.random.default_rng(seed).permutation(base)


def cv_score(x, y, lam: float, fold_of: np.ndarray) -> float:
    """Mean squared prediction error over held-out folds."""
    err = 0.0
    for f in np.unique(fold_of):
        train = fold_of != f
        g = smooth_values(x[train], y[train], lam)
        pred = _NaturalSpline(x[train], g)(x[~train])
        err += float(((pred - y[~train]) ** 2).sum())
    return err / len(y)


def fit_spline(series, lambda_grid=DEFAULT_LAMBDA_GRID, folds: int = 5, fold_seed: int | None = None) -> SplineFit:
    """Smoothing spline with the penalty chosen by k-fold cross-validation.

    Parameters
    ----------
    series : BrightnessSeries or array of T values
    lambda_grid : penalty values to try (> 0)
    folds : number of CV folds (>= 2; capped at T)
    fold_seed : random balanced folds instead of interleaved ones

    Ties in CV score go to the larger penalty.
    """
    y = np.asarray(getattr(series, "values", series), dtype=np.float64)
    T = len(y)
    if T < 4:
        raise TooFewPoints(f"need at least 4 points, got {T}")
    grid = np.asarray(sorted(float(v) for v in lambda_grid), dtype=np.float64)
    if grid.size == 0 or (grid <= 0).any():
        raise ValidationError("lambda grid must be non-empty and positive")
    if int(folds) < 2:
        raise ValidationError("folds must be >= 2")
    x = np.arange(T, dtype=np.float64)
    fold_of = fold_assignment(T, min(int(folds), T), fold_seed)
    scores = np.array([cv_score(x, y, lam, fold_of) for lam in grid])
    best = int(np.flatnonzero(scores <= scores.min() * (1 + 1e-12) + 1e-300)[-1])
    lam = float(grid[best])
    g = smooth_values(x, y, lam)
    cs = CubicSpline(x, g, bc_type="natural")
    return SplineFit(x, cs.c.copy(), lam, float(scores[best]), g, grid, scores)


# ---------------------------------------------------------------------------
# correction


def correct_brightness(stack: VideoStack, trend=None, mode: str = "to_mean") -> VideoStack:
    """Remove global brightness changes from every frame.

    Modes
    -----
    to_mean
        ``X - B_t + mean(B)`` with ``B`` the measured brightness (``trend``,
        when given, stands in for the measured series).
    remove_trend
        ``X - trend_t + mean(trend)``: removes the smooth trend itself.
    to_trend
        ``X - B_t + trend_t``: removes only the deviation of the measured
        brightness from the smooth trend, i.e. flicker, keeping slow changes.
    """
    if mode not in MODES:
        raise ValidationError(f"mode must be one of {MODES}")
    B = frame_brightness(stack).values
    T = len(B)
    if trend is not None:
        trend = np.asarray(getattr(trend, "values", getattr(trend, "fitted", trend)), dtype=np.float64)
        if trend.shape != (T,):
            raise LengthMismatch(f"trend has length {trend.size}, stack has {T} frames")
    if mode == "to_mean":
        ref = B if trend is None else trend
        offset = ref.mean() - ref
    elif trend is None:
        raise ValidationError(f"mode {mode} needs a trend")
    elif mode == "remove_trend":
        offset = trend.mean() - trend
    else:
        offset = trend - B
    frames = np.asarray(stack.frames, dtype=np.float64) + offset[:, None, None]
    return VideoStack(frames, stack.frame_interval, stack.pixel_size)


# ---------------------------------------------------------------------------
# spatial filters


@dataclass(frozen=True)
class FilterConfig:
    """Neighborhood ``{(k, l) : D((m, n), (k, l)) <= radius}`` and bilateral
    widths.  ``sigma_value = None`` is allowed for the mean filter."""

    radius: int = 1
    metric: str = "chebyshev"
    sigma_spatial: float = 1.0
    sigma_value: float | None = None

    def __post_init__(self):
        if int(self.radius) != self.radius or self.radius < 1:
            raise ValidationError("radius must be an integer >= 1")
        if self.metric not in ("chebyshev", "euclidean"):
            raise ValidationError("metric must be 'chebyshev' or 'euclidean'")
        if not self.sigma_spatial > 0:
            raise ValidationError("sigma_spatial must be > 0")
        if self.sigma_value is not None and not self.sigma_value > 0:
            raise ValidationError("sigma_value must be > 0")

    def offsets(self) -> list[tuple[int, int]]:
        r = int(self.radius)
        out = []
        for dy in range(-r, r + 1):
            for dx in range(-r, r + 1):
                if self.metric == "chebyshev" or dy * dy + dx * dx <= r * r:
                    out.append((dy, dx))
        return out


def _shifted(a: np.ndarray, dy: int, dx: int):
    """Slices (dst, src) pairing pixel (m, n) with (m + dy, n + dx), both in bounds."""
    M, N = a.shape[-2:]
    ys = slice(max(0, -dy), M - max(0, dy))
    xs = slice(max(0, -dx), N - max(0, dx))
    ys2 = slice(max(0, dy), M - max(0, -dy))
    xs2 = slice(max(0, dx), N - max(0, -dx))
    return (..., ys, xs), (..., ys2, xs2)


def mean_filter(frame, cfg: FilterConfig = FilterConfig()) -> np.ndarray:
    """Unweighted neighborhood mean, truncated at the frame edges.

    Works on a single frame or any stack whose last two axes are the image.
    """
    a = np.asarray(frame, dtype=np.float64)
    total = np.zeros_like(a)
    count = np.zeros(a.shape[-2:])
    for dy, dx in cfg.offsets():
        dst, src = _shifted(a, dy, dx)
        total[dst] += a[src]
        count[dst[1:]] += 1
    return total / count


def bilateral_filter(frame, cfg: FilterConfig) -> np.ndarray:
    """Weighted mean with weights ``exp(-dist^2 / 2 s_s^2) * exp(-dv^2 / 2 s_v^2)``."""
    if cfg.sigma_value is None:
        raise ValidationError("bilateral filter needs sigma_value")
    a = np.asarray(frame, dtype=np.float64)
    num = np.zeros_like(a)
    den = np.zeros_like(a)
    inv_s = 1.0 / (2 * cfg.sigma_spatial**2)
    inv_v = 1.0 / (2 * cfg.sigma_value**2)
    for dy, dx in cfg.offsets():
        dst, src = _shifted(a, dy, dx)
        nb = a[src]
        w = math.exp(-(dy * dy + dx * dx) * inv_s) * np.exp(-((nb - a[dst]) ** 2) * inv_v)
        num[dst] += w * nb
        den[dst] += w
    return num / den


def filter_stack(stack: VideoStack, kind: str, cfg: FilterConfig) -> VideoStack:
    """Apply ``mean`` or ``bilateral`` filtering to every frame (``none`` is a no-op)."""
    if kind == "none":
        return stack
    fn = {"mean": mean_filter, "bilateral": bilateral_filter}.get(kind)
    if fn is None:
        raise ValidationError(f"unknown filter {kind!r}")
    return VideoStack(fn(stack.frames, cfg), stack.frame_interval, stack.pixel_size)
