"""Monte Carlo run-length simulation and threshold calibration.

Run ``r`` under ``seed`` draws its samples from ``substream(seed, r, 1)`` and,
for post-change runs, its sparse support from ``substream(seed, r, 0)``, so
results do not depend on how runs are spread over workers.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .._workers import default_workers
from ..errors import CalibrationDiverged, CensoringWarning, ValidationError
from ..synth import substream
from . import kernels
from .core import ProcedureConfig

BLOCK = 256


class FastDetector:
    """Resumable compiled detector for one stream of dimension ``d``."""

    def __init__(self, config: ProcedureConfig, d: int):
        self.config = config
        self.d = d
        self.t = 0
        proc = config.procedure
        if proc in ("ACM", "ASR"):
            W = config.w + 1
            self.theta = np.zeros((W, d))
            self.loglr = np.zeros(W)
            self.kstart = np.zeros(W, dtype=np.int64)
        elif proc == "GLR":
            self.prefix = np.zeros((config.w + 1, d))
            self.csum = np.zeros(d)
        else:
            self.theta1 = np.ascontiguousarray(config.cusum_mean, dtype=np.float64)
            if self.theta1.shape != (d,):
                raise ValidationError("cusum_mean dimension differs from d")
            self.state = np.zeros(1)

    def advance(self, X: np.ndarray, b: float = math.inf) -> tuple[int, np.ndarray]:
        """Consume rows of ``X`` until the statistic exceeds ``b``; return
        (rows consumed, their statistics)."""
        X = np.ascontiguousarray(X, dtype=np.float64)
        out = np.empty(len(X))
        c = self.config
        if c.procedure in ("ACM", "ASR"):
            s = c.constraint.s
            n = kernels.adaptive_advance(
                X, self.t, self.theta, self.loglr, self.kstart, s, c.eta,
                c.eta_mode == "decay", c.procedure == "ASR", b, out,
            )
        elif c.procedure == "GLR":
            n = kernels.glr_advance(X, self.t, self.prefix, self.csum, b, out)
        else:
            n = kernels.cusum_advance(X, self.state, self.theta1, b, out)
        self.t += n
        return n, out[:n]


def statistic_path(stream, config: ProcedureConfig, b: float | None = None) -> np.ndarray:
    """Detection statistic at every t (compiled path); stops after the first
    value above ``b`` (default ``config.b``)."""
    X = np.asarray(stream, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    det = FastDetector(config, X.shape[1])
    _, stats = det.advance(X, config.b if b is None else b)
    return stats


@dataclass
class ChangeModel:
    """Sparse mean shift after ``nu`` samples: ``support`` random coordinates
    of the post-change mean equal ``mu``."""

    nu: int
    support: int
    mu: float


def _run_one(config, d, r, seed, max_len, b, change: ChangeModel | None, keep_path: bool):
    det = FastDetector(config, d)
    rng = substream(seed, r, 1)
    theta = None
    if change is not None:
        theta = np.zeros(d)
        idx = substream(seed, r, 0).choice(d, size=change.support, replace=False)
        theta[np.sort(idx)] = change.mu
    t = 0
    path = np.empty(max_len) if keep_path else None
    while t < max_len:
        m = min(BLOCK, max_len - t)
        X = rng.standard_normal((m, d))
        if theta is not None and t + m > change.nu:
            X[max(change.nu - t, 0):] += theta
        n, stats = det.advance(X, b)
        if keep_path:
            path[t : t + n] = stats
        t += n
        if n < m:
            return t, path
    return max_len + 1, path


def _map_runs(fn, runs, workers):
    workers = default_workers() if workers is None else workers
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(fn, range(runs)))
    return [fn(r) for r in range(runs)]


def simulate_stop_times(
    config: ProcedureConfig,
    d: int,
    runs: int,
    max_len: int,
    seed: int = 0,
    change: ChangeModel | None = None,
    workers: int | None = None,
) -> np.ndarray:
    """Stopping time of each run at threshold ``config.b``; ``max_len + 1``
    marks a run that never stopped."""
    out = _map_runs(lambda r: _run_one(config, d, r, seed, max_len, config.b, change, False)[0], runs, workers)
    return np.asarray(out, dtype=np.int64)


@dataclass
class NullPaths:
    """Running maxima of the detection statistic on ``runs`` null streams.

    The stopping time at any threshold ``b`` is the first index whose running
    max exceeds ``b``, so one simulation serves every ``b``.  Runs simulated
    with a finite ``cap`` stop at their first value above it and are padded
    with +inf, which leaves stopping times exact for every ``b < cap``.
    """

    running_max: np.ndarray  # runs x max_len
    cap: float = math.inf

    @property
    def max_len(self) -> int:
        return self.running_max.shape[1]

    def stop_times(self, b: float) -> np.ndarray:
        return (self.running_max <= b).sum(axis=1) + 1

    def arl(self, b: float) -> tuple[float, float]:
        """(mean run length with censored runs counted at max_len, censored fraction)."""
        st = self.stop_times(b)
        censored = st > self.max_len
        return float(np.minimum(st, self.max_len).mean()), float(censored.mean())


def null_paths(
    config: ProcedureConfig,
    d: int,
    runs: int,
    max_len: int,
    seed: int = 0,
    workers=None,
    cap: float = math.inf,
    first: int = 0,
) -> NullPaths:
    """Simulate null runs ``first .. first + runs - 1``."""

    def one(r):
        n, path = _run_one(config, d, first + r, seed, max_len, cap, None, True)
        if n <= max_len:
            path[n:] = math.inf
        return np.maximum.accumulate(path)

    return NullPaths(np.vstack(_map_runs(one, runs, workers)), cap)


def _bisect(paths: NullPaths, target, lo, hi, tol, max_iter):
    """Bisection for ARL(b) = target on [lo, hi]; returns (rel err, b, arl, iterations)."""
    best = (math.inf, hi, paths.arl(hi)[0])
    it = 0
    for it in range(1, max_iter + 1):
        mid = 0.5 * (lo + hi)
        arl, _ = paths.arl(mid)
        err = abs(arl / target - 1.0)
        if err < best[0]:
            best = (err, mid, arl)
        if err <= tol:
            break
        if arl < target:
            lo = mid
        else:
            hi = mid
    return best + (it,)


def empirical_arl(config: ProcedureConfig, d: int, runs: int, max_len: int, seed: int = 0, workers=None) -> float:
    """Mean stopping time on null streams at ``config.b`` (censored at max_len)."""
    st = simulate_stop_times(config, d, runs, max_len, seed, None, workers)
    return float(np.minimum(st, max_len).mean())


@dataclass
class CalibrationResult:
    b: float
    arl: float
    censored: float
    iterations: int
    bracket: tuple[float, float]


def calibrate_threshold(
    config: ProcedureConfig,
    target_arl: float,
    d: int,
    runs: int = 1000,
    max_len: int | None = None,
    seed: int = 0,
    tol: float = 0.01,
    max_iter: int = 60,
    workers: int | None = None,
    pilot_runs: int = 100,
) -> CalibrationResult:
    """Bisect on ``b`` until the null mean run length is within ``tol``
    (relative) of ``target_arl``; anything within 10% is accepted.

    Runs still going at ``max_len`` (default ``5 * target_arl``) count as
    ``max_len``; a :class:`CensoringWarning` fires when more than 5% are
    censored at the returned threshold.  A pilot of ``pilot_runs`` full-length
    runs (indices after the main ones) picks a cap with ARL about 1.5 x target,
    so the main runs can stop at the cap.  The bracket is widened to the
    uncapped paths if the cap turns out to be too low.
    """
    if target_arl < 10:
        raise ValidationError("target_arl must be >= 10")
    if runs < 100:
        raise ValidationError("runs must be >= 100")
    max_len = int(max_len or math.ceil(5 * target_arl))
    if max_len < 0.9 * target_arl:
        raise CalibrationDiverged(f"max_len {max_len} cannot reach target ARL {target_arl}")
    cap = math.inf
    if pilot_runs:
        pilot = null_paths(config, d, pilot_runs, max_len, seed, workers, first=runs)
        lo, hi = _bracket(pilot)
        if pilot.arl(hi)[0] >= 1.5 * target_arl:
            err, cap, _, _ = _bisect(pilot, 1.5 * target_arl, lo, hi, 0.05, max_iter)
    paths = null_paths(config, d, runs, max_len, seed, workers, cap)
    lo, hi = _bracket(paths)
    if paths.arl(hi)[0] < target_arl and math.isfinite(cap):
        paths = null_paths(config, d, runs, max_len, seed, workers)
        lo, hi = _bracket(paths)
    arl_lo, arl_hi = paths.arl(lo)[0], paths.arl(hi)[0]
    if not (arl_lo <= target_arl <= arl_hi):
        raise CalibrationDiverged(
            f"target ARL {target_arl} outside the reachable range [{arl_lo}, {arl_hi}]; raise max_len"
        )
    err, b, arl, it = _bisect(paths, target_arl, lo, hi, tol, max_iter)
    if err > 0.10:
        raise CalibrationDiverged(f"closest ARL {arl:.1f} is not within 10% of {target_arl}")
    _, censored = paths.arl(b)
    if censored > 0.05:
        warnings.warn(f"{censored:.1%} of calibration runs were censored at {max_len}", CensoringWarning)
    return CalibrationResult(b, arl, censored, it, (lo, hi))


def _bracket(paths: NullPaths) -> tuple[float, float]:
    rm = paths.running_max
    lo = float(rm[:, 0].min()) - 1.0
    if math.isfinite(paths.cap):
        # just below the cap, where stopping times are still exact
        return lo, float(np.nextafter(paths.cap, -math.inf))
    return lo, float(rm[:, -1].max()) + 1.0
