import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp
from scipy.stats import multivariate_normal

from temsig.detect import (
    ChangeModel,
    DetectorState,
    FastDetector,
    ProcedureConfig,
    SparseConstraint,
    calibrate_threshold,
    empirical_arl,
    gaussian_log_lr_increment,
    null_paths,
    omd_update,
    project_l1_ball,
    run,
    run_cusum,
    run_glr,
    simulate_stop_times,
    statistic_path,
)
from temsig.detect.kernels import _project_l1_inplace
from temsig.errors import CalibrationDiverged, DimensionMismatch, ValidationError


def kkt_projection(v, s):
    """l1-ball projection with the soft threshold found by bisection."""
    a = np.abs(v)
    if a.sum() <= s:
        return v.copy()
    lo, hi = 0.0, a.max()
    for _ in range(200):
        tau = 0.5 * (lo + hi)
        if np.maximum(a - tau, 0).sum() > s:
            lo = tau
        else:
            hi = tau
    return np.sign(v) * np.maximum(a - 0.5 * (lo + hi), 0)


def replay(X, k, t, s, eta_mode="decay", eta=1.0):
    """log LR of candidate k after t samples, recomputed from scratch."""
    theta = np.zeros(X.shape[1])
    total = 0.0
    for i in range(k, t + 1):
        x = X[i - 1]
        total += theta @ x - 0.5 * theta @ theta
        step = 1 / math.sqrt(i - k + 1) if eta_mode == "decay" else eta
        theta = kkt_projection(theta - step * (theta - x), s)
    return total


# building blocks


def test_increment_examples():
    assert gaussian_log_lr_increment(np.zeros(3), np.array([1.0, -2.0, 5.0])) == 0.0
    assert gaussian_log_lr_increment([1.0, 0.0], [1.0, 0.0]) == 0.5


def test_increment_matches_density_difference():
    rng = np.random.default_rng(0)
    for _ in range(10):
        th, x = rng.standard_normal(10), rng.standard_normal(10)
        ref = multivariate_normal(th, np.eye(10)).logpdf(x) - multivariate_normal(np.zeros(10), np.eye(10)).logpdf(x)
        assert abs(gaussian_log_lr_increment(th, x) - ref) < 1e-10


def test_projection_examples():
    assert project_l1_ball([0.3, 0.2], 1).tolist() == [0.3, 0.2]
    assert project_l1_ball([3.0, 0.0], 1).tolist() == [1.0, 0.0]
    np.testing.assert_allclose(project_l1_ball([2.0, 1.0], 1), [1.0, 0.0], atol=1e-15)
    assert project_l1_ball([5.0, -7.0], math.inf).tolist() == [5.0, -7.0]
    with pytest.raises(ValidationError):
        project_l1_ball([1.0], 0.0)


@settings(max_examples=80, deadline=None)
@given(
    v=hnp.arrays(np.float64, st.integers(1, 30), elements=st.floats(-50, 50)),
    s=st.floats(0.01, 20),
)
def test_projection_matches_kkt_and_compiled(v, s):
    u = project_l1_ball(v, s)
    assert np.abs(u).sum() <= s + 1e-9
    np.testing.assert_allclose(u, kkt_projection(v, s), atol=1e-8)
    w = v.copy()
    _project_l1_inplace(w, s, np.empty((2, len(v))), np.abs(v).sum())
    np.testing.assert_allclose(w, u, atol=1e-12)


def test_omd_examples():
    c = SparseConstraint(1.0)
    th = np.array([0.2, -0.3])
    assert np.array_equal(omd_update(th, th, 0.7, c), th)
    np.testing.assert_allclose(omd_update(np.zeros(2), [0.4, 0.1], 1.0, c), [0.4, 0.1])
    np.testing.assert_allclose(omd_update(np.zeros(2), [2.0, 1.0], 1.0, c), [1.0, 0.0], atol=1e-15)


# detector state


def test_zero_stream_never_favors_change():
    st_ = DetectorState(4, ProcedureConfig(w=5, constraint=SparseConstraint(2.0)))
    for _ in range(30):
        st_.step(np.zeros(4))
        assert max(st_.log_lr) <= 0


def test_window_holds_w_plus_one_candidates():
    st_ = DetectorState(3, ProcedureConfig(w=2))
    rng = np.random.default_rng(0)
    for _ in range(10):
        st_.step(rng.standard_normal(3))
    assert st_.ks == [8, 9, 10]
    with pytest.raises(DimensionMismatch):
        st_.step(np.zeros(4))


@pytest.mark.parametrize("eta_mode,s", [("decay", 1.0), ("decay", 4.0), ("const", 2.0)])
def test_recursion_equals_replay(eta_mode, s):
    rng = np.random.default_rng(11)
    X = rng.standard_normal((200, 50)) + 0.3 * (rng.random(50) < 0.1)
    cfg = ProcedureConfig(w=20, eta_mode=eta_mode, eta=0.3, constraint=SparseConstraint(s))
    st_ = DetectorState(50, cfg)
    for t in range(1, 201):
        st_.step(X[t - 1])
        for th in st_.theta:
            assert np.abs(th).sum() <= s + 1e-12
        if t % 50 == 0:
            for k, val in zip(st_.ks, st_.log_lr):
                assert abs(val - replay(X, k, t, s, eta_mode, 0.3)) < 1e-9


# stopping rules


@pytest.mark.parametrize("proc", ["ACM", "ASR", "GLR"])
def test_infinite_threshold_never_stops(proc):
    X = np.random.default_rng(0).standard_normal((100, 5)) + 2.0
    res = run(X, ProcedureConfig(proc, w=10))
    assert not res.stopped and res.stop_time is None
    assert len(res.statistics) == 100


def test_asr_dominates_acm():
    X = np.random.default_rng(1).standard_normal((150, 8))
    X[80:, :2] += 1.0
    acm = run(X, ProcedureConfig("ACM", w=15, constraint=SparseConstraint(2.0))).statistics
    asr = run(X, ProcedureConfig("ASR", w=15, constraint=SparseConstraint(2.0))).statistics
    assert (asr >= acm - 1e-12).all()


def test_coordinate_permutation_invariance():
    rng = np.random.default_rng(2)
    X = rng.standard_normal((120, 12))
    X[60:, 3] += 1.5
    perm = rng.permutation(12)
    for proc in ("ACM", "ASR"):
        cfg = ProcedureConfig(proc, w=20, constraint=SparseConstraint(1.5))
        np.testing.assert_allclose(run(X, cfg).statistics, run(X[:, perm], cfg).statistics, atol=1e-10)


def test_stop_result_semantics():
    X = np.random.default_rng(3).standard_normal((200, 10))
    X[100:, :3] += 1.0
    cfg = ProcedureConfig("ACM", w=30, b=6.0, constraint=SparseConstraint(3.0))
    res = run(X, cfg)
    assert res.stopped
    full = run(X, cfg, stop=False).statistics
    assert full[res.stop_time - 1] > 6.0
    assert (full[: res.stop_time - 1] <= 6.0).all()
    assert res.stop_time - 30 <= res.arg_k <= res.stop_time
    assert np.abs(res.theta_estimate).sum() <= 3.0 + 1e-12
    assert set(res.to_json()) == {"stopped", "stop_time", "arg_k", "final_statistic", "theta_estimate"}


@settings(max_examples=30, deadline=None)
@given(b1=st.floats(-5, 20), b2=st.floats(-5, 20), seed=st.integers(0, 50))
def test_lower_threshold_never_stops_later(b1, b2, seed):
    lo, hi = sorted((b1, b2))
    X = np.random.default_rng(seed).standard_normal((150, 6)) + 0.2
    cfg = ProcedureConfig("ACM", w=25, constraint=SparseConstraint(1.0))
    a = run(X, cfg.with_threshold(lo))
    b = run(X, cfg.with_threshold(hi))
    ta = a.stop_time or 151
    tb = b.stop_time or 151
    assert ta <= tb


def test_cusum_examples():
    X = np.random.default_rng(0).standard_normal((50, 3))
    res = run_cusum(X, ProcedureConfig("CUSUM", b=0.5, cusum_mean=np.zeros(3)))
    assert not res.stopped and (res.statistics == 0).all()
    W, prev = [], 0.0
    th = np.array([0.5, 0.5, 0.5])
    for x in X:
        prev = max(0.0, prev) + th @ x - 0.5 * th @ th
        W.append(prev)
    np.testing.assert_allclose(run_cusum(X, ProcedureConfig("CUSUM", cusum_mean=th)).statistics, W, atol=1e-12)
    with pytest.raises(ValidationError):
        ProcedureConfig("CUSUM")


def test_glr_examples():
    assert (run_glr(np.zeros((20, 4)), ProcedureConfig("GLR", w=5)).statistics == 0).all()
    x = np.array([[1.0, -2.0, 0.5]])
    assert run_glr(x, ProcedureConfig("GLR", w=3)).statistics[0] == pytest.approx(0.5 * (x**2).sum())
    X = np.random.default_rng(4).standard_normal((30, 3))
    stats = run_glr(X, ProcedureConfig("GLR", w=4)).statistics
    t = 20
    ref = max((t - k + 1) * 0.5 * np.sum(X[k - 1 : t].mean(axis=0) ** 2) for k in range(t - 4, t + 1))
    assert stats[t - 1] == pytest.approx(ref, abs=1e-12)


# compiled kernels


@pytest.mark.parametrize(
    "cfg",
    [
        ProcedureConfig("ACM", w=10, constraint=SparseConstraint(1.0)),
        ProcedureConfig("ASR", w=7, constraint=SparseConstraint(3.0)),
        ProcedureConfig("ACM", w=5, eta_mode="const", eta=0.2, constraint=SparseConstraint(math.inf)),
        ProcedureConfig("GLR", w=12),
        ProcedureConfig("CUSUM", cusum_mean=np.full(20, 0.3)),
    ],
    ids=["acm", "asr", "acm-const", "glr", "cusum"],
)
def test_compiled_path_matches_reference(cfg):
    X = np.random.default_rng(5).standard_normal((300, 20))
    X[150:, :4] += 0.8
    ref = run(X, cfg, stop=False).statistics
    np.testing.assert_allclose(statistic_path(X, cfg), ref, atol=1e-9)
    det = FastDetector(cfg, 20)
    parts = [det.advance(X[i : i + 37])[1] for i in range(0, 300, 37)]
    np.testing.assert_allclose(np.concatenate(parts), ref, atol=1e-9)


def test_compiled_detector_stops_at_threshold():
    X = np.random.default_rng(6).standard_normal((100, 5)) + 1.0
    cfg = ProcedureConfig("ACM", w=20, b=5.0, constraint=SparseConstraint(2.0))
    n, stats = FastDetector(cfg, 5).advance(X, 5.0)
    assert n == run(X, cfg).stop_time
    assert stats[-1] > 5.0 and (stats[:-1] <= 5.0).all()


# Monte Carlo


def test_null_paths_monotone_in_b():
    paths = null_paths(ProcedureConfig("ACM", w=10), 5, 100, 300, seed=0)
    arls = [paths.arl(b)[0] for b in np.linspace(-1, 6, 30)]
    assert all(x <= y for x, y in zip(arls, arls[1:]))
    st1 = paths.stop_times(2.0)
    st2 = paths.stop_times(3.0)
    assert (st1 <= st2).all()


def test_stop_times_match_reference_runs():
    cfg = ProcedureConfig("ACM", w=10, b=3.0, constraint=SparseConstraint(1.0))
    st_ = simulate_stop_times(cfg, 4, 20, 200, seed=9)
    from temsig.synth import substream

    for r in range(20):
        X = substream(9, r, 1).standard_normal((200, 4))
        res = run(X, cfg)
        assert st_[r] == (res.stop_time if res.stopped else 201)


def test_calibration_small_target_converges_fast():
    cal = calibrate_threshold(ProcedureConfig("CUSUM", cusum_mean=np.ones(1)), 10, 1, runs=200, seed=4)
    assert cal.iterations <= 40
    assert abs(cal.arl / 10 - 1) <= 0.10


def test_calibration_is_independent_of_workers():
    cfg = ProcedureConfig("ACM", w=10, constraint=SparseConstraint(1.0))
    a = calibrate_threshold(cfg, 50, 10, runs=100, seed=3, workers=1)
    b = calibrate_threshold(cfg, 50, 10, runs=100, seed=3, workers=4)
    assert a.b == b.b and a.arl == b.arl


def test_calibration_errors():
    cfg = ProcedureConfig("CUSUM", cusum_mean=np.ones(1))
    with pytest.raises(ValidationError):
        calibrate_threshold(cfg, 5, 1)
    with pytest.raises(ValidationError):
        calibrate_threshold(cfg, 100, 1, runs=50)
    with pytest.raises(CalibrationDiverged):
        calibrate_threshold(cfg, 1000, 1, runs=100, max_len=200)


def test_cusum_delay_near_wald_approximation():
    cfg = ProcedureConfig("CUSUM", b=8.0, cusum_mean=np.ones(1))
    st_ = simulate_stop_times(cfg, 1, 2000, 1000, seed=3, change=ChangeModel(0, 1, 1.0))
    wald = 8.0 / 0.5
    assert abs(st_.mean() / wald - 1) <= 0.25


def test_cusum_calibration_holds_on_fresh_seeds():
    cfg = ProcedureConfig("CUSUM", cusum_mean=np.ones(1))
    cal = calibrate_threshold(cfg, 500, 1, runs=1000, seed=4)
    arl = empirical_arl(cfg.with_threshold(cal.b), 1, 1000, 5000, seed=99)
    assert abs(arl / 500 - 1) <= 0.15


@pytest.mark.slow
def test_acm_rarely_stops_before_change():
    cfg = ProcedureConfig("ACM", w=50, constraint=SparseConstraint(1.0))
    cal = calibrate_threshold(cfg, 1000, 100, runs=100, seed=1)
    st_ = simulate_stop_times(cfg.with_threshold(cal.b), 100, 500, 400, seed=2, change=ChangeModel(50, 5, 1.0))
    after = st_ > 50
    print(f"b={cal.b:.4f} stopped after change: {after.mean():.3f} mean delay {np.mean(st_[after] - 50):.1f}")
    assert after.mean() >= 0.95
