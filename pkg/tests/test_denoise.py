import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp
from scipy.interpolate import make_smoothing_spline

from temsig.denoise import (
    DEFAULT_LAMBDA_GRID,
    FilterConfig,
    bilateral_filter,
    correct_brightness,
    filter_stack,
    fit_spline,
    fold_assignment,
    frame_brightness,
    mean_filter,
    smooth_values,
)
from temsig.errors import LengthMismatch, TooFewPoints, ValidationError
from temsig.io import VideoStack
from temsig.synth import SynthSpec, gen_corrosion_video


def brute_mean(frame, r, metric="chebyshev"):
    M, N = frame.shape
    out = np.empty((M, N))
    for m in range(M):
        for n in range(N):
            vals = []
            for k in range(M):
                for l in range(N):
                    d = max(abs(k - m), abs(l - n)) if metric == "chebyshev" else math.hypot(k - m, l - n)
                    if d <= r:
                        vals.append(frame[k, l])
            out[m, n] = sum(vals) / len(vals)
    return out


def brute_bilateral(frame, r, ss, sv):
    M, N = frame.shape
    out = np.empty((M, N))
    for m in range(M):
        for n in range(N):
            num = den = 0.0
            for k in range(max(0, m - r), min(M, m + r + 1)):
                for l in range(max(0, n - r), min(N, n + r + 1)):
                    w = math.exp(-((k - m) ** 2 + (l - n) ** 2) / (2 * ss**2)) * math.exp(
                        -((frame[k, l] - frame[m, n]) ** 2) / (2 * sv**2)
                    )
                    num += w * frame[k, l]
                    den += w
            out[m, n] = num / den
    return out


# brightness series


def test_brightness_of_constant_and_small_frame():
    assert np.allclose(frame_brightness(VideoStack(np.full((4, 3, 3), 2.5))).values, 2.5)
    assert frame_brightness(VideoStack(np.array([[[0, 2], [4, 6]]]))).values.tolist() == [3.0]


def test_brightness_matches_synth_truth():
    p = {"M": 32, "N": 32, "T": 40, "base": 0.2, "step": 1.0, "drift_amplitude": 0.4}
    stack, truth = gen_corrosion_video(SynthSpec("corrosion_video", p, 5))
    expect = 0.2 + truth.corroded.reshape(40, -1).mean(axis=1) + truth.drift
    np.testing.assert_allclose(frame_brightness(stack).values, expect, atol=1e-6)


# smoothing spline


@pytest.mark.parametrize("lam", [1e-3, 0.1, 3.0, 1e3])
@pytest.mark.parametrize("seed", [0, 1])
def test_smoothing_matches_scipy(lam, seed):
    rng = np.random.default_rng(seed)
    x = np.arange(25, dtype=float)
    y = np.sin(x / 4) + 0.2 * rng.standard_normal(25)
    ref = make_smoothing_spline(x, y, lam=lam)(x)
    np.testing.assert_allclose(smooth_values(x, y, lam), ref, atol=1e-9)


def test_linear_series_reproduced_for_every_lambda():
    y = 2.0 * np.arange(20)
    for lam in DEFAULT_LAMBDA_GRID:
        np.testing.assert_allclose(smooth_values(np.arange(20.0), y, lam), y, atol=1e-6)
    fit = fit_spline(y)
    np.testing.assert_allclose(fit.fitted, y, atol=1e-6)
    np.testing.assert_allclose(fit(np.array([2.5, 25.0])), [5.0, 50.0], atol=1e-6)


@settings(max_examples=30, deadline=None)
@given(a=st.floats(-100, 100), b=st.floats(-10, 10), T=st.integers(4, 40))
def test_affine_series_reproduced(a, b, T):
    y = a + b * np.arange(T)
    for lam in DEFAULT_LAMBDA_GRID:
        np.testing.assert_allclose(smooth_values(np.arange(float(T)), y, lam), y, atol=1e-6 * max(1, abs(a), abs(b) * T))


def test_constant_series():
    fit = fit_spline(np.full(12, 4.0))
    np.testing.assert_allclose(fit.fitted, 4.0, atol=1e-12)
    assert fit.cv_score < 1e-20


def test_spline_is_natural_and_c2():
    rng = np.random.default_rng(3)
    fit = fit_spline(rng.standard_normal(30))
    c = fit.coefficients  # descending powers per interval
    h = 1.0
    val_end = c[0] * h**3 + c[1] * h**2 + c[2] * h + c[3]
    d1_end = 3 * c[0] * h**2 + 2 * c[1] * h + c[2]
    d2_end = 6 * c[0] * h + 2 * c[1]
    np.testing.assert_allclose(val_end[:-1], c[3, 1:], atol=1e-10)
    np.testing.assert_allclose(d1_end[:-1], c[2, 1:], atol=1e-10)
    np.testing.assert_allclose(d2_end[:-1], 2 * c[1, 1:], atol=1e-10)
    assert abs(2 * c[1, 0]) < 1e-10
    assert abs(d2_end[-1]) < 1e-10


def test_too_few_points_and_bad_grid():
    with pytest.raises(TooFewPoints):
        fit_spline([1.0, 2.0, 3.0])
    with pytest.raises(ValidationError):
        fit_spline(np.arange(6.0), lambda_grid=[])
    with pytest.raises(ValidationError):
        fit_spline(np.arange(6.0), lambda_grid=[-1.0])


def _noisy_sine(seed, T=32):
    t = np.arange(T)
    clean = np.sin(2 * np.pi * t / T)
    return clean, clean + 0.1 * np.random.default_rng(seed).standard_normal(T)


def test_cv_beats_grid_extremes_on_sine():
    x = np.arange(32.0)
    grid = DEFAULT_LAMBDA_GRID
    for seed in range(20):
        clean, y = _noisy_sine(seed)
        fit = fit_spline(y, grid)
        mse = np.mean((fit.fitted - clean) ** 2)
        lo = np.mean((smooth_values(x, y, grid[0]) - clean) ** 2)
        hi = np.mean((smooth_values(x, y, grid[-1]) - clean) ** 2)
        assert mse < lo and mse < hi, seed


def test_fold_seed_changes_lambda_by_at_most_one_step():
    _, y = _noisy_sine(0)
    grid = np.asarray(DEFAULT_LAMBDA_GRID)
    picks = [int(np.argmin(abs(grid - fit_spline(y, grid, fold_seed=s).lam))) for s in range(10)]
    assert max(picks) - min(picks) <= 1


def test_fold_assignment_balanced():
    f = fold_assignment(23, 5, seed=4)
    assert sorted(np.bincount(f).tolist()) == [4, 4, 5, 5, 5]
    assert fold_assignment(7, 3).tolist() == [0, 1, 2, 0, 1, 2, 0]


# brightness correction


def test_to_mean_on_constant_brightness_is_identity():
    rng = np.random.default_rng(0)
    frame = rng.random((8, 8))
    st_ = VideoStack(np.stack([frame] * 5))
    out = correct_brightness(st_)
    np.testing.assert_allclose(out.frames, st_.frames, atol=1e-6)


def test_to_mean_removes_additive_drift():
    p = {"M": 16, "N": 16, "T": 30, "velocity": 0.0, "texture": 0.5, "drift_amplitude": 0.7}
    stack, truth = gen_corrosion_video(SynthSpec("corrosion_video", p, 2))
    out = correct_brightness(stack)
    np.testing.assert_allclose(out.frames, np.broadcast_to(truth.base, out.shape), atol=1e-6)


@settings(max_examples=25, deadline=None)
@given(hnp.arrays(np.float64, (6, 3, 4), elements=st.floats(-100, 100)))
def test_to_mean_flattens_brightness(frames):
    out = correct_brightness(VideoStack(frames))
    B = frame_brightness(out).values
    assert np.ptp(B) < 1e-4


def test_remove_trend_keeps_corrosion_step():
    p = {"M": 32, "N": 32, "T": 60, "velocity": 0.4, "drift_amplitude": 0.3}
    stack, truth = gen_corrosion_video(SynthSpec("corrosion_video", p, 8))
    fit = fit_spline(frame_brightness(stack), lambda_grid=[1e3])
    out = correct_brightness(stack, fit, "remove_trend").frames.astype(np.float64)
    onset = truth.onset_frame
    m, n = np.nonzero(np.isfinite(onset) & (onset > 0))
    t = onset[m, n].astype(int)
    step = out[t, m, n] - out[t - 1, m, n]
    assert step.min() >= 0.8


def test_to_trend_keeps_slow_changes_removes_flicker():
    p = {"M": 16, "N": 16, "T": 40, "velocity": 0.0, "flicker": 0.1}
    stack, _ = gen_corrosion_video(SynthSpec("corrosion_video", p, 1))
    ramp = VideoStack(stack.frames + 0.05 * np.arange(40)[:, None, None])
    fit = fit_spline(frame_brightness(ramp), lambda_grid=[1e3])
    B = frame_brightness(correct_brightness(ramp, fit, "to_trend")).values
    np.testing.assert_allclose(B, fit.fitted, atol=1e-5)
    assert np.std(np.diff(B) - 0.05) < 0.01


def test_correction_errors():
    st_ = VideoStack(np.zeros((5, 2, 2)))
    with pytest.raises(LengthMismatch):
        correct_brightness(st_, np.zeros(4), "remove_trend")
    with pytest.raises(ValidationError):
        correct_brightness(st_, None, "remove_trend")
    with pytest.raises(ValidationError):
        correct_brightness(st_, None, "sideways")


# spatial filters


def test_mean_filter_examples():
    f = np.zeros((3, 3))
    f[1, 1] = 9
    assert mean_filter(f)[1, 1] == 1.0
    assert np.array_equal(mean_filter(np.full((5, 4), 3.0)), np.full((5, 4), 3.0))


@pytest.mark.parametrize("r,metric", [(1, "chebyshev"), (2, "chebyshev"), (2, "euclidean"), (3, "euclidean")])
def test_mean_filter_matches_brute_force(r, metric):
    f = np.random.default_rng(r).random((16, 16))
    np.testing.assert_allclose(mean_filter(f, FilterConfig(r, metric)), brute_mean(f, r, metric), atol=1e-7)


def test_bilateral_matches_brute_force():
    f = np.random.default_rng(1).random((12, 12))
    cfg = FilterConfig(2, "chebyshev", 1.3, 0.2)
    np.testing.assert_allclose(bilateral_filter(f, cfg), brute_bilateral(f, 2, 1.3, 0.2), atol=1e-10)


def test_bilateral_constant_and_large_sigma_v():
    cfg = FilterConfig(1, sigma_spatial=1.0, sigma_value=0.1)
    assert np.allclose(bilateral_filter(np.full((4, 4), 2.0), cfg), 2.0)
    f = np.random.default_rng(2).random((10, 10))
    wide = bilateral_filter(f, FilterConfig(2, sigma_spatial=1.5, sigma_value=1e9))
    gauss = brute_bilateral(f, 2, 1.5, 1e12)
    np.testing.assert_allclose(wide, gauss, atol=1e-6)


def test_bilateral_preserves_step_edge():
    f = np.zeros((12, 12))
    f[:, 6:] = 1.0
    bil = bilateral_filter(f, FilterConfig(1, sigma_value=0.1))
    mean = mean_filter(f)
    assert np.abs(bil - f).max() < 0.05
    assert np.abs(mean - f)[:, 5:7].min() >= 0.3


def test_filters_commute_with_offsets_but_bilateral_not_with_scale():
    f = np.random.default_rng(5).random((10, 10))
    cfg = FilterConfig(1, sigma_value=0.2)
    np.testing.assert_allclose(mean_filter(f + 3.0), mean_filter(f) + 3.0, atol=1e-12)
    np.testing.assert_allclose(bilateral_filter(f + 3.0, cfg), bilateral_filter(f, cfg) + 3.0, atol=1e-12)
    np.testing.assert_allclose(mean_filter(4.0 * f), 4.0 * mean_filter(f), atol=1e-12)
    assert np.abs(bilateral_filter(4.0 * f, cfg) - 4.0 * bilateral_filter(f, cfg)).max() > 1e-2


def test_filter_stack_and_config_validation():
    st_ = VideoStack(np.random.default_rng(0).random((3, 6, 6)))
    out = filter_stack(st_, "mean", FilterConfig())
    for t in range(3):
        np.testing.assert_allclose(out.frames[t], mean_filter(st_.frames[t]), atol=1e-6)
    assert filter_stack(st_, "none", FilterConfig()) is st_
    with pytest.raises(ValidationError):
        FilterConfig(0)
    with pytest.raises(ValidationError):
        FilterConfig(1, "manhattan")
    with pytest.raises(ValidationError):
        bilateral_filter(st_.frames[0], FilterConfig())
