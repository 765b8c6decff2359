import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from invariant_cae.alignment import (
    GroundTruthMap,
    WarpingPath,
    check_path,
    coarsen,
    dtw,
    evaluate_alignment,
    expand_window,
    fastdtw,
    frame_distances,
    path_time_map,
    tempo_scale,
)
from invariant_cae.basis import grid_dft_basis, magnitude_features
from invariant_cae.data_io import FeatureMatrix, ngram_slice, synth_cqt_like
from invariant_cae.errors import ValidationError
from invariant_cae.experiments import fastdtw_fidelity
from invariant_cae.transforms import pitch_shift


def dtw_oracle(D):
    """Textbook cumulative-cost table filled cell by cell."""
    ta, tb = D.shape
    acc = np.full((ta + 1, tb + 1), np.inf)
    acc[0, 0] = 0.0
    for i in range(1, ta + 1):
        for j in range(1, tb + 1):
            acc[i, j] = D[i - 1, j - 1] + min(acc[i - 1, j], acc[i, j - 1], acc[i - 1, j - 1])
    return acc[ta, tb]


def path_cost(D, pairs):
    return float(sum(D[i, j] for i, j in pairs))


# ---- exact DTW


@pytest.mark.parametrize("distance", ["cosine", "euclidean"])
def test_dtw_matches_brute_force(distance):
    rng = np.random.default_rng(11)
    for _ in range(5):
        A, B = rng.normal(size=(20, 4)), rng.normal(size=(30, 4))
        D = frame_distances(A, B, distance)
        path = dtw(A, B, distance)
        check_path(path, 20, 30)
        assert path.cost == pytest.approx(dtw_oracle(D), rel=1e-12)
        assert path.cost == pytest.approx(path_cost(D, path.pairs), rel=1e-12)


def test_dtw_single_frames(rng):
    A, B = rng.random((1, 3)), rng.random((5, 3))
    path = dtw(A, B)
    assert path.pairs.tolist() == [[0, j] for j in range(5)]
    assert dtw(A, A).pairs.tolist() == [[0, 0]]


def test_dtw_identical_is_diagonal(rng):
    A = rng.random((25, 6))
    path = dtw(A, A)
    assert path.pairs.tolist() == [[i, i] for i in range(25)]
    assert path.cost == pytest.approx(0.0, abs=1e-12)


@given(st.integers(0, 10_000))
@settings(max_examples=25)
def test_dtw_cost_symmetric(seed):
    rng = np.random.default_rng(seed)
    A, B = rng.normal(size=(12, 3)), rng.normal(size=(9, 3))
    assert dtw(A, B).cost == pytest.approx(dtw(B, A).cost, rel=1e-12)


def test_dtw_errors():
    with pytest.raises(ValidationError):
        dtw(np.zeros((0, 3)), np.ones((2, 3)))
    with pytest.raises(ValidationError):
        dtw(np.ones((2, 3)), np.ones((2, 4)))
    with pytest.raises(ValidationError):
        frame_distances(np.ones((2, 2)), np.ones((2, 2)), "manhattan")


# ---- FastDTW


def test_fastdtw_small_inputs_are_exact(rng):
    A, B = rng.normal(size=(10, 3)), rng.normal(size=(12, 3))
    fast, exact = fastdtw(A, B, radius=50), dtw(A, B)
    assert np.array_equal(fast.pairs, exact.pairs) and fast.cost == exact.cost


@given(st.integers(0, 10_000), st.integers(0, 6))
@settings(max_examples=25)
def test_fastdtw_never_beats_exact(seed, radius):
    rng = np.random.default_rng(seed)
    A, B = rng.normal(size=(40, 3)), rng.normal(size=(33, 3))
    fast = fastdtw(A, B, radius)
    check_path(fast, 40, 33)
    assert fast.cost >= dtw(A, B).cost - 1e-9


def test_fastdtw_close_to_exact_on_smooth_sequences():
    assert fastdtw_fidelity(n_pairs=5, n_frames=120, radius=10) <= 0.01


def test_coarsen_and_window():
    X = np.arange(10.0).reshape(5, 2)
    np.testing.assert_allclose(coarsen(X), [[1, 2], [5, 6], [8, 9]])
    lo, hi = expand_window(np.array([[0, 0], [1, 1]]), 4, 4, 0)
    assert lo.tolist() == [0, 0, 2, 2] and hi.tolist() == [1, 1, 3, 3]
    with pytest.raises(ValidationError):
        fastdtw(X, X, radius=-1)


def test_check_path_rejects_bad_paths():
    with pytest.raises(ValidationError, match="illegal step"):
        check_path(WarpingPath(np.array([[0, 0], [2, 2]]), 0.0), 3, 3)
    with pytest.raises(ValidationError):
        check_path(WarpingPath(np.array([[0, 0], [1, 1]]), 0.0), 3, 3)


# ---- evaluation


def test_evaluate_diagonal_path_is_perfect():
    path = WarpingPath(np.column_stack([np.arange(50)] * 2), 0.0)
    gt = GroundTruthMap(np.column_stack([np.arange(1, 40) * 0.1] * 2))
    rep = evaluate_alignment(path, 0.1, 0.1, gt)
    assert rep.median == pytest.approx(0.0, abs=1e-12)
    assert rep.rate_50ms == 1.0 and rep.rate_250ms == 1.0 and rep.n_clamped == 0


def test_evaluate_constant_offset():
    path = WarpingPath(np.column_stack([np.arange(50)] * 2), 0.0)
    times = np.arange(1, 40) * 0.1
    gt = GroundTruthMap(np.column_stack([times, times + 0.1]))
    rep = evaluate_alignment(path, 0.1, 0.1, gt)
    assert rep.q1 == pytest.approx(0.1) and rep.median == pytest.approx(0.1) and rep.q3 == pytest.approx(0.1)
    assert rep.rate_50ms == 0.0 and rep.rate_250ms == 1.0


def test_evaluate_clamps_events_outside_path():
    path = WarpingPath(np.column_stack([np.arange(10)] * 2), 0.0)
    gt = GroundTruthMap([[0.5, 0.5], [2.0, 0.9]])
    rep = evaluate_alignment(path, 0.1, 0.1, gt)
    assert rep.n_clamped == 1 and rep.rate_50ms == 1.0
    with pytest.raises(ValidationError):
        evaluate_alignment(path, 0.1, 0.1, GroundTruthMap())


def test_path_time_map_averages_repeats():
    path = WarpingPath(np.array([[0, 0], [0, 1], [1, 2], [2, 2]]), 0.0)
    ta, tb = path_time_map(path, 1.0, 2.0)
    assert ta.tolist() == [0.0, 1.0, 2.0] and tb.tolist() == [1.0, 4.0, 4.0]


def test_ground_truth_csv_round_trip(tmp_path):
    gt = GroundTruthMap([[0.1, 0.2], [0.5, 0.7]])
    gt.save(tmp_path / "gt.csv")
    back = GroundTruthMap.load(tmp_path / "gt.csv")
    assert np.array_equal(back.events, gt.events)
    (tmp_path / "bad.csv").write_text("time_a,time_b\n0.1,0.2\n0.3,x\n")
    with pytest.raises(ValidationError, match="line 3"):
        GroundTruthMap.load(tmp_path / "bad.csv")
    with pytest.raises(ValidationError):
        GroundTruthMap([[0.5, 0.1], [0.2, 0.3]])


# ---- tempo scaling


def test_tempo_scale_lengths():
    X = FeatureMatrix(np.random.default_rng(0).random((100, 4)), 0.05)
    assert tempo_scale(X, 2.0).n_frames == 50
    assert tempo_scale(X, 0.8).n_frames == 125
    same = tempo_scale(X, 1.0)
    assert np.array_equal(same.values, X.values) and same.frame_hop_seconds == 0.05
    with pytest.raises(ValidationError):
        tempo_scale(X, 0.0)
    with pytest.raises(ValidationError):
        tempo_scale(X, 80.0)


@pytest.mark.parametrize("factor", [0.8, 1.25, 1.5])
def test_tempo_scale_round_trip(factor):
    t = np.linspace(0, 4 * np.pi, 400)
    values = np.column_stack([np.sin(t), np.cos(2 * t), np.sin(0.5 * t) ** 2])
    X = FeatureMatrix(values, 0.05)
    back = tempo_scale(tempo_scale(X, factor), 1 / factor).values
    span = values.max() - values.min()
    assert back.shape == values.shape
    assert np.abs(back - values).max() <= 0.05 * span


# ---- transposition robustness


@pytest.mark.parametrize("shift", [-24, -7, 5, 12, 24])
def test_magnitude_alignment_ignores_transposition(shift):
    n, F = 8, 120
    fm = synth_cqt_like(3, 200, F, 45)
    basis = grid_dft_basis(n, F, "freq", onesided=True)
    A = magnitude_features(basis, ngram_slice(fm.values, n))
    B = magnitude_features(basis, ngram_slice(pitch_shift(fm.values, shift), n))
    path = fastdtw(A, B, radius=50)
    ta, tb = path_time_map(path, 1.0, 1.0)
    assert np.abs(tb - ta).max() <= 2
