"""Reference implementation of the online sparse change-point detectors.

Observations are d-vectors, N(0, I) before the change and N(theta, I) after,
with theta unknown.  For every candidate change time ``k`` in a sliding
window the detector keeps a running log likelihood ratio and an estimate of
theta updated by projected online gradient descent onto an l1 ball.  Times
are 1-based: the first sample is ``t = 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from ..errors import DimensionMismatch, ValidationError

PROCEDURES = ("ACM", "ASR", "CUSUM", "GLR")


@dataclass(frozen=True)
class SparseConstraint:
    """l1 ball ``{theta : ||theta||_1 <= s}``; ``s = inf`` means no constraint."""

    s: float = 1.0

    def __post_init__(self):
        if not self.s > 0:
            raise ValidationError("l1 radius s must be > 0")


@dataclass
class ProcedureConfig:
    procedure: str = "ACM"
    w: int = 50
    b: float = math.inf
    eta_mode: str = "decay"  # "decay": 1/sqrt(t-k+1); "const": eta
    eta: float = 1.0
    constraint: SparseConstraint = field(default_factory=SparseConstraint)
    cusum_mean: np.ndarray | None = None

    def __post_init__(self):
        self.procedure = self.procedure.upper()
        if self.procedure not in PROCEDURES:
            raise ValidationError(f"procedure must be one of {PROCEDURES}")
        if int(self.w) < 1:
            raise ValidationError("window w must be >= 1")
        self.w = int(self.w)
        if math.isnan(self.b) or self.b == -math.inf:
            raise ValidationError("threshold b must be a number or +inf")
        if self.eta_mode not in ("decay", "const"):
            raise ValidationError("eta_mode must be 'decay' or 'const'")
        if not self.eta > 0:
            raise ValidationError("eta must be > 0")
        if self.procedure == "CUSUM":
            if self.cusum_mean is None:
                raise ValidationError("CUSUM needs cusum_mean")
            self.cusum_mean = np.asarray(self.cusum_mean, dtype=np.float64)

    def with_threshold(self, b: float) -> "ProcedureConfig":
        return ProcedureConfig(self.procedure, self.w, b, self.eta_mode, self.eta, self.constraint, self.cusum_mean)


def gaussian_log_lr_increment(theta, x) -> float:
    """``log f_theta(x) - log f_0(x) = theta.x - ||theta||^2 / 2`` for unit covariance."""
    theta = np.asarray(theta, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    return float(theta @ x - 0.5 * (theta @ theta))


def project_l1_ball(v, s: float) -> np.ndarray:
    """Euclidean projection of ``v`` onto ``{u : ||u||_1 <= s}``.

    Soft-thresholds at the exact level found by sorting ``|v|``.
    """
    v = np.asarray(v, dtype=np.float64)
    if not s > 0:
        raise ValidationError("s must be > 0")
    a = np.abs(v)
    if math.isinf(s) or a.sum() <= s:
        return v.copy()
    mu = np.sort(a)[::-1]
    cssv = np.cumsum(mu) - s
    j = np.arange(1, len(mu) + 1)
    rho = np.nonzero(mu - cssv / j > 0)[0][-1]
    tau = cssv[rho] / (rho + 1)
    return np.sign(v) * np.maximum(a - tau, 0.0)


def omd_update(theta, x, eta: float, constraint: SparseConstraint) -> np.ndarray:
    """One projected gradient step on ``-log f_theta(x)`` (gradient ``theta - x``)."""
    theta = np.asarray(theta, dtype=np.float64)
    return project_l1_ball(theta - eta * (theta - np.asarray(x, dtype=np.float64)), constraint.s)


class DetectorState:
    """Window of candidate change times with running log LRs and estimates.

    After ``t`` steps the window holds candidates ``k`` in
    ``[max(1, t - w), t]``.  Candidate ``k`` enters at step ``k`` with
    ``log_lr = 0`` and ``theta_hat = 0``, so its first increment is zero.
    """

    def __init__(self, d: int, config: ProcedureConfig):
        if d < 1:
            raise ValidationError("d must be >= 1")
        self.d = int(d)
        self.config = config
        self.t = 0
        self.ks: list[int] = []
        self.log_lr: list[float] = []
        self.theta: list[np.ndarray] = []

    def _eta(self, k: int) -> float:
        if self.config.eta_mode == "decay":
            return 1.0 / math.sqrt(self.t - k + 1)
        return self.config.eta

    def step(self, x) -> "DetectorState":
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.d,):
            raise DimensionMismatch(f"sample has shape {x.shape}, expected ({self.d},)")
        self.t += 1
        t, w = self.t, self.config.w
        self.ks.append(t)
        self.log_lr.append(0.0)
        self.theta.append(np.zeros(self.d))
        while self.ks[0] < t - w:
            self.ks.pop(0)
            self.log_lr.pop(0)
            self.theta.pop(0)
        for i, k in enumerate(self.ks):
            self.log_lr[i] += gaussian_log_lr_increment(self.theta[i], x)
            self.theta[i] = omd_update(self.theta[i], x, self._eta(k), self.config.constraint)
        return self

    def acm_statistic(self) -> tuple[float, int]:
        """Window max of log LR and its (earliest) maximizing candidate."""
        i = int(np.argmax(self.log_lr))
        return float(self.log_lr[i]), self.ks[i]

    def asr_statistic(self) -> float:
        return float(logsumexp(self.log_lr))


def step(state: DetectorState, x_t) -> DetectorState:
    return state.step(x_t)


@dataclass
class StopResult:
    stopped: bool
    stop_time: int | None
    arg_k: int | None
    final_statistic: float
    theta_estimate: np.ndarray
    statistics: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0))

    def to_json(self) -> dict:
        return {
            "stopped": bool(self.stopped),
            "stop_time": self.stop_time,
            "arg_k": self.arg_k,
            "final_statistic": float(self.final_statistic),
            "theta_estimate": [float(v) for v in self.theta_estimate],
        }


def _as_stream(stream) -> np.ndarray:
    X = np.asarray(stream, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise DimensionMismatch("stream must be a sequence of d-vectors")
    return X


def run(stream, config: ProcedureConfig, stop: bool = True) -> StopResult:
    """Run ACM or ASR over ``stream``; stop at the first ``t`` with statistic > b.

    With ``stop=False`` the whole stream is processed and the first crossing
    is still reported.
    """
    if config.procedure == "CUSUM":
        return run_cusum(stream, config, stop)
    if config.procedure == "GLR":
        return run_glr(stream, config, stop)
    X = _as_stream(stream)
    state = DetectorState(X.shape[1], config)
    stats = np.empty(len(X))
    hit = None
    for i, x in enumerate(X):
        state.step(x)
        stat, k = state.acm_statistic()
        if config.procedure == "ASR":
            stat = state.asr_statistic()
        stats[i] = stat
        if hit is None and stat > config.b:
            hit = (state.t, k, stat, state.theta[state.ks.index(k)].copy())
            if stop:
                break
    n = i + 1 if len(X) else 0
    if hit is not None:
        t, k, stat, th = hit
        return StopResult(True, t, k, stat, th, stats[:n])
    if len(X) == 0:
        return StopResult(False, None, None, -math.inf, np.zeros(0), stats)
    stat, k = state.acm_statistic()
    final = stats[n - 1]
    return StopResult(False, None, None, final, state.theta[state.ks.index(k)].copy(), stats[:n])


def run_cusum(stream, config: ProcedureConfig, stop: bool = True) -> StopResult:
    """Classical CUSUM for a known post-change mean ``config.cusum_mean``."""
    X = _as_stream(stream)
    theta1 = np.asarray(config.cusum_mean, dtype=np.float64)
    if theta1.shape != (X.shape[1],):
        raise DimensionMismatch("cusum_mean dimension differs from the stream")
    half = 0.5 * theta1 @ theta1
    W = 0.0
    stats = np.empty(len(X))
    hit = None
    for i, x in enumerate(X):
        W = max(0.0, W) + float(theta1 @ x) - half
        stats[i] = W
        if hit is None and W > config.b:
            hit = i + 1
            if stop:
                break
    n = (i + 1) if len(X) else 0
    final = stats[n - 1] if n else 0.0
    if hit is not None:
        return StopResult(True, hit, None, stats[hit - 1], theta1.copy(), stats[:n])
    return StopResult(False, None, None, final, theta1.copy(), stats[:n])


def run_glr(stream, config: ProcedureConfig, stop: bool = True) -> StopResult:
    """Window-limited GLR: exact (unconstrained) MLE per candidate,
    statistic ``max_k (t-k+1) ||mean(x_k..x_t)||^2 / 2``."""
    X = _as_stream(stream)
    T, d = X.shape
    csum = np.vstack([np.zeros(d), np.cumsum(X, axis=0)])
    stats = np.empty(T)
    hit = None
    best_k, best_mean = None, np.zeros(d)
    for t in range(1, T + 1):
        ks = np.arange(max(1, t - config.w), t + 1)
        sums = csum[t] - csum[ks - 1]
        n = (t - ks + 1).astype(np.float64)
        vals = 0.5 * np.einsum("ij,ij->i", sums, sums) / n
        j = int(np.argmax(vals))
        stats[t - 1] = vals[j]
        best_k, best_mean = int(ks[j]), sums[j] / n[j]
        if hit is None and vals[j] > config.b:
            hit = (t, best_k, vals[j], best_mean)
            if stop:
                break
    n_done = t if T else 0
    if hit is not None:
        return StopResult(True, hit[0], hit[1], hit[2], hit[3], stats[:n_done])
    if T == 0:
        return StopResult(False, None, None, 0.0, np.zeros(d), stats)
    return StopResult(False, None, None, stats[n_done - 1], best_mean, stats[:n_done])
