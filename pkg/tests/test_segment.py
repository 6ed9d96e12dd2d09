import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from temsig.errors import EmptyInput, TooFewFrames, ValidationError
from temsig.io import VideoStack
from temsig.segment import (
    LabelVideo,
    SegmentConfig,
    corrosion_stats,
    forward_difference,
    label_onset,
    majority_smooth,
    quantile_threshold,
    remonotonize,
    segment_stack,
)
from temsig.synth import SynthSpec, gen_corrosion_video


def brute_majority(frame, r=1, f=0.5):
    M, N = frame.shape
    out = frame.copy()
    for m, n in itertools.product(range(M), range(N)):
        nb = [
            frame[k, l]
            for k in range(max(0, m - r), min(M, m + r + 1))
            for l in range(max(0, n - r), min(N, n + r + 1))
            if (k, l) != (m, n)
        ]
        if sum(v != frame[m, n] for v in nb) > f * len(nb):
            out[m, n] = 1 - frame[m, n]
    return out


# differences and thresholds


def test_forward_difference_examples():
    assert forward_difference(VideoStack(np.full((4, 3, 3), 2.0))).max() == 0
    assert forward_difference(VideoStack(np.array([[[0.0]], [[3.0]]]))).tolist() == [[[3.0]]]
    with pytest.raises(TooFewFrames):
        forward_difference(VideoStack(np.zeros((1, 2, 2))))


def test_forward_difference_brute_force():
    X = np.random.default_rng(0).random((5, 4, 3)).astype(np.float32)
    D = forward_difference(VideoStack(X))
    for t, m, n in itertools.product(range(4), range(4), range(3)):
        assert D[t, m, n] == float(X[t + 1, m, n]) - float(X[t, m, n])


def test_nearest_rank_quantile():
    assert quantile_threshold(np.arange(1, 101, dtype=float), 0.99) == 99
    assert quantile_threshold(np.full(7, 2.5), 0.3) == 2.5
    assert quantile_threshold(np.array([3.0, 1.0, 2.0]), 0.5) == 2
    d = np.arange(24, dtype=float).reshape(2, 3, 4)
    assert quantile_threshold(d, 0.5, per_frame=True).tolist() == [5.0, 17.0]
    with pytest.raises(EmptyInput):
        quantile_threshold(np.zeros(0), 0.5)
    with pytest.raises(ValidationError):
        quantile_threshold(np.ones(3), 1.0)


# labels


def test_label_onset_examples():
    d = np.zeros((6, 2, 2))
    _, lab = label_onset(d, 0.5)
    assert not lab.labels.any()
    d[3, 1, 0] = 2.0
    state, lab = label_onset(d, 0.5)
    assert state.S.sum() == 1
    assert lab.labels[:, 1, 0].tolist() == [0, 0, 0, 0, 1, 1, 1]
    assert lab.labels[:, 0].sum() == 0
    with pytest.raises(ValidationError):
        label_onset(d, np.inf)


def test_noise_free_synth_labels_equal_truth():
    stack, truth = gen_corrosion_video(SynthSpec("corrosion_video", {"M": 24, "N": 24, "T": 30}))
    state, lab = label_onset(forward_difference(stack), 0.5)
    assert np.array_equal(lab.labels.astype(bool), truth.corroded)


@settings(max_examples=40, deadline=None)
@given(
    X=hnp.arrays(np.float64, st.tuples(st.integers(2, 6), st.integers(1, 5), st.integers(1, 5)), elements=st.floats(-10, 10)),
    q=st.floats(0.05, 0.95),
)
def test_labels_monotone(X, q):
    d = forward_difference(X)
    _, lab = label_onset(d, quantile_threshold(d, q))
    assert lab.is_monotone()
    assert (lab.labels[0] == 0).all()


@settings(max_examples=40, deadline=None)
@given(
    X=hnp.arrays(np.float64, (5, 4, 4), elements=st.floats(-10, 10)),
    q1=st.floats(0.05, 0.95),
    q2=st.floats(0.05, 0.95),
)
def test_higher_quantile_never_adds_area(X, q1, q2):
    lo, hi = sorted((q1, q2))
    d = forward_difference(X)
    _, a = label_onset(d, quantile_threshold(d, lo))
    _, b = label_onset(d, quantile_threshold(d, hi))
    assert (b.labels.reshape(5, -1).sum(1) <= a.labels.reshape(5, -1).sum(1)).all()


@settings(max_examples=25, deadline=None)
@given(c=st.floats(-50, 50))
def test_pipeline_ignores_constant_offset(c):
    stack, _ = gen_corrosion_video(SynthSpec("corrosion_video", {"M": 16, "N": 16, "T": 12, "sigma": 0.2, "velocity": 0.8}, 3))
    f = stack.frames.astype(np.float64)
    # use an offset that is exact in float32 so the difference is unchanged bit for bit
    c = float(np.float32(round(c)))
    a = segment_stack(VideoStack(f))
    b = segment_stack(VideoStack(f + c))
    assert np.array_equal(a[0].labels, b[0].labels)
    assert np.array_equal(a[1].labels, b[1].labels)
    assert np.array_equal(a[2].area_fraction, b[2].area_fraction)
    assert np.array_equal(a[3].S, b[3].S)


# majority smoothing


def test_majority_uniform_and_isolated():
    z = np.zeros((1, 5, 5), dtype=int)
    assert np.array_equal(majority_smooth(z).labels, z)
    assert np.array_equal(majority_smooth(1 - z).labels, 1 - z)
    z[0, 2, 2] = 1
    assert not majority_smooth(z).labels.any()


def test_majority_checkerboard_matches_enumeration():
    board = (np.add.outer(np.arange(6), np.arange(7)) % 2).astype(int)
    out = majority_smooth(board[None]).labels[0]
    assert np.array_equal(out, brute_majority(board))
    # interior pixels see 4 of 8 disagreeing neighbors, which is not more than half
    assert np.array_equal(out[1:-1, 1:-1], board[1:-1, 1:-1])
    # corners and edges see a disagreeing majority
    assert out[0, 0] != board[0, 0]


@settings(max_examples=40, deadline=None)
@given(
    frame=hnp.arrays(np.int64, st.tuples(st.integers(1, 7), st.integers(1, 7)), elements=st.integers(0, 1)),
    r=st.integers(1, 2),
    f=st.sampled_from([0.25, 0.5, 0.75]),
)
def test_majority_matches_brute_force(frame, r, f):
    assert np.array_equal(majority_smooth(frame[None], r, f).labels[0], brute_majority(frame, r, f))


def test_remonotonize():
    lab = np.array([0, 1, 0, 0, 1], dtype=np.uint8)[:, None, None]
    assert not LabelVideo(lab).is_monotone()
    assert remonotonize(lab).labels.ravel().tolist() == [0, 1, 1, 1, 1]


# stats


def test_stats_all_zero():
    s = corrosion_stats(np.zeros((4, 3, 3), dtype=int))
    assert (s.area_fraction == 0).all()
    assert np.isinf(s.onset_time).all()
    assert (s.velocity == 0).all()


def test_stats_single_full_frame():
    lab = np.zeros((2, 3, 3), dtype=int)
    lab[1] = 1
    s = corrosion_stats(lab, 0.5)
    assert s.area_fraction.tolist() == [0.0, 1.0]
    assert (s.onset_time == 0.5).all()
    assert (s.velocity == 0).all()


def test_stats_area_non_decreasing_and_onset_finite_where_labeled():
    lab = (np.random.default_rng(1).random((8, 6, 6)) > 0.8).astype(int)
    s = corrosion_stats(lab)
    assert (np.diff(s.area_fraction) >= 0).all()
    final = remonotonize(lab).labels[-1]
    assert np.array_equal(np.isfinite(s.onset_time), final == 1)


@pytest.mark.parametrize("v", [0.3, 0.5, 1.0])
def test_front_speed_recovered(v):
    spec = SynthSpec("corrosion_video", {"M": 64, "N": 64, "T": int(28 / v), "velocity": v, "frame_interval": 2.0, "pixel_size": 3.0})
    stack, truth = gen_corrosion_video(spec)
    s = corrosion_stats(truth.corroded, stack.frame_interval, stack.pixel_size)
    inner = np.isfinite(s.onset_time) & (s.velocity > 0)
    expect = v * 3.0 / 2.0  # px/frame -> nm/s
    assert abs(np.median(s.velocity[inner]) / expect - 1) < 0.10


def test_segment_stack_smoothing_toggle():
    stack, _ = gen_corrosion_video(SynthSpec("corrosion_video", {"M": 16, "N": 16, "T": 10, "sigma": 0.3}, 0))
    raw, sm, stats, state = segment_stack(stack, SegmentConfig(smooth=False))
    assert raw is sm
    assert state.q == 0.99
    state = segment_stack(stack, SegmentConfig(per_frame=True))[3]
    assert np.shape(state.threshold) == (9,)
