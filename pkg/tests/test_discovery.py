import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from invariant_cae.basis import grid_dft_basis, magnitude_features
from invariant_cae.data_io import ngram_slice, synth_cqt_like
from invariant_cae.discovery import (
    RepeatedSection,
    cosine_distance_matrix,
    diagonal_smooth,
    discover,
    evaluate_overlap,
    find_diagonals,
    interval_iou,
    pair_iou,
    postprocess,
    self_similarity,
    to_frames,
)
from invariant_cae.errors import ValidationError
from invariant_cae.experiments import discovery_trial, planted_piece
from invariant_cae.transforms import pitch_shift


def smooth_oracle(S, k):
    """Direct 2-D valid correlation with an identity kernel."""
    K = np.eye(k)
    rows, cols = S.shape[0] - k + 1, S.shape[1] - k + 1
    out = np.empty((rows, cols))
    for i in range(rows):
        for j in range(cols):
            out[i, j] = np.sum(S[i : i + k, j : j + k] * K)
    return out


def cosine_oracle(p, q):
    if not np.any(p) or not np.any(q):
        return 1.0
    return 1.0 - p @ q / (np.linalg.norm(p) * np.linalg.norm(q))


# ---- self-similarity


def test_self_similarity_examples():
    F = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 2.0]])
    S = self_similarity(F).values
    assert S[0, 1] == pytest.approx(1e8)
    assert S[0, 2] == pytest.approx(1.0, rel=1e-7)


def test_self_similarity_matches_oracle(rng):
    F = rng.random((12, 5))
    F[3] = 0.0
    S = self_similarity(F).values
    for i in range(12):
        for j in range(12):
            assert S[i, j] == pytest.approx(1.0 / (cosine_oracle(F[i], F[j]) + 1e-8), rel=1e-6)


@given(st.integers(0, 10_000))
def test_self_similarity_symmetric(seed):
    F = np.random.default_rng(seed).normal(size=(15, 6))
    S = self_similarity(F).values
    assert np.abs(S - S.T).max() <= 1e-9 and np.all(np.isfinite(S))


def test_self_similarity_too_small():
    with pytest.raises(ValidationError):
        self_similarity(np.ones((1, 3)))


def test_cosine_distance_zero_rows():
    d = cosine_distance_matrix(np.array([[0.0, 0.0], [1.0, 1.0]]))
    assert d[0].tolist() == [1.0, 1.0] and d[1, 1] == pytest.approx(0.0, abs=1e-15)


# ---- smoothing


def test_smooth_identity_kernel(rng):
    S = rng.random((8, 8))
    assert np.array_equal(diagonal_smooth(S, 1), S)


def test_smooth_constant():
    np.testing.assert_allclose(diagonal_smooth(np.full((20, 20), 0.3), 10), 3.0)


def test_smooth_ridge_peak():
    S = np.zeros((40, 40))
    for t in range(15):
        S[5 + t, 20 + t] = 2.0
    out = diagonal_smooth(S, 10)
    assert out.max() == pytest.approx(20.0)
    np.testing.assert_allclose(out, smooth_oracle(S, 10))


def test_smooth_errors():
    with pytest.raises(ValidationError):
        diagonal_smooth(np.ones((5, 5)), 6)
    with pytest.raises(ValidationError):
        diagonal_smooth(np.ones((5, 5)), 0)


@given(st.integers(0, 10_000), st.floats(-5, 5), st.floats(-5, 5), st.integers(1, 6))
def test_smooth_is_linear(seed, a, b, k):
    rng = np.random.default_rng(seed)
    S1, S2 = rng.normal(size=(2, 12, 12))
    lhs = diagonal_smooth(a * S1 + b * S2, k)
    rhs = a * diagonal_smooth(S1, k) + b * diagonal_smooth(S2, k)
    np.testing.assert_allclose(lhs, rhs, atol=1e-9)


# ---- postprocess


def test_postprocess_properties(rng):
    S = rng.random((15, 15)) * 7
    out = postprocess(S)
    assert abs(np.median(out)) <= 1e-12
    med = np.median(out + 0)
    scaled = S.copy()
    np.fill_diagonal(scaled, 0.0)
    scaled /= np.abs(scaled).max()
    assert scaled.max() == 1.0
    shift = np.median(scaled)
    np.testing.assert_allclose(np.diag(out), -shift, atol=1e-15)
    assert med == pytest.approx(0.0, abs=1e-12)


def test_postprocess_all_zero():
    assert not postprocess(np.zeros((4, 4))).any()
    with pytest.raises(ValidationError):
        postprocess(np.zeros((3, 4)))


# ---- diagonals


def test_find_diagonals_nothing_above_threshold(rng):
    S = rng.random((20, 20)) * 0.005
    assert find_diagonals(S, 0.01) == []
    assert find_diagonals(rng.random((20, 20)), threshold=2.0) == []


def test_find_diagonals_bridges_gaps():
    S = np.zeros((40, 40))
    for t in range(20):
        S[2 + t, 12 + t] = 0.5
    S[2 + 8, 12 + 8] = 0.0
    S[2 + 9, 12 + 9] = 0.0
    found = find_diagonals(S, 0.01, min_length=10, max_gap=2)
    assert len(found) == 1
    sec = found[0]
    assert sec.occurrence_a == (2, 22) and sec.occurrence_b == (12, 32) and sec.lag == 10
    assert sec.occurrence_a[0] <= sec.occurrence_b[0]
    # unbridged, the pieces are 8 and 10 long
    assert find_diagonals(S, 0.01, min_length=11, max_gap=1) == []


def test_find_diagonals_sorted_by_score():
    S = np.zeros((50, 50))
    for t in range(12):
        S[t, 20 + t] = 0.3
        S[t + 5, 35 + t] = 0.9
    found = find_diagonals(S)
    assert [round(s.score, 6) for s in found] == [0.9, 0.3]


@given(st.integers(0, 10_000), st.floats(0.1, 100))
def test_find_diagonals_scale_stable(seed, c):
    S = np.random.default_rng(seed).random((25, 25))
    plain = find_diagonals(S, 0.6, min_length=3, max_gap=1)
    scaled = find_diagonals(c * S, 0.6 * c, min_length=3, max_gap=1)
    assert [(s.occurrence_a, s.occurrence_b) for s in plain] == [(s.occurrence_a, s.occurrence_b) for s in scaled]


def test_to_frames_mapping():
    sec = RepeatedSection((10, 30), (50, 70), 1.0)
    assert to_frames(sec, 1).occurrence_a == (10, 30)
    # kernel centre offset (k-1)//2 and n-gram extent n-1
    mapped = to_frames(sec, 8, kernel=10)
    assert mapped.occurrence_a == (14, 41) and mapped.occurrence_b == (54, 81)
    hopped = to_frames(sec, 8, kernel=1, hop=2)
    assert hopped.occurrence_a == (20, 66)


# ---- overlap scoring


def test_interval_iou():
    assert interval_iou((0, 10), (0, 10)) == 1.0
    assert interval_iou((0, 10), (5, 15)) == pytest.approx(5 / 15)
    assert interval_iou((0, 5), (6, 9)) == 0.0


def test_pair_iou_either_order():
    a = RepeatedSection((0, 10), (20, 30), 1.0)
    b = RepeatedSection((20, 30), (0, 10), 1.0)
    assert pair_iou(a, b) == 1.0


def test_evaluate_overlap_examples():
    gt = [RepeatedSection((0, 10), (20, 30), 1.0), RepeatedSection((40, 50), (60, 70), 1.0)]
    assert evaluate_overlap(gt, gt) == (1.0, 1.0, 1.0)
    assert evaluate_overlap([], gt) == (1.0, 0.0, 0.0)
    p, r, f = evaluate_overlap(gt[:1], gt)
    assert (p, r) == (1.0, 0.5) and f == pytest.approx(2 / 3)
    with pytest.raises(ValidationError):
        evaluate_overlap(gt, [])
    with pytest.raises(ValidationError):
        evaluate_overlap(gt, gt, iou_threshold=0.0)


def test_evaluate_overlap_one_to_one():
    gt = [RepeatedSection((0, 10), (20, 30), 1.0)]
    found = [RepeatedSection((0, 10), (20, 30), 1.0), RepeatedSection((1, 10), (21, 30), 0.5)]
    assert evaluate_overlap(found, gt)[:2] == (0.5, 1.0)


# ---- end to end


def test_planted_repetition_recovered():
    iou, result, piece = discovery_trial(0)
    assert iou >= 0.8
    top = result.sections[0]
    assert top.length > 0 and top.lag == pytest.approx(piece.truth.lag, abs=3)


def test_transposed_copy_beats_random_ngrams():
    piece = planted_piece(1)
    n = 16
    basis = grid_dft_basis(n, piece.features.shape[1], "freq", onesided=True)
    feats = magnitude_features(basis, ngram_slice(piece.features, n))
    S = self_similarity(feats).values
    (a0, _), (b0, _) = piece.truth.occurrence_a, piece.truth.occurrence_b
    rng = np.random.default_rng(0)
    for offset in range(0, 30, 5):
        i, j = a0 + offset, b0 + offset
        others = S[i, rng.choice(S.shape[0], 200, replace=False)]
        assert S[i, j] > np.percentile(others, 99)


def test_magnitudes_see_through_transposition_raw_does_not():
    values = synth_cqt_like(5, 80, 120, 20).values
    shifted = pitch_shift(values, 7)
    n = 8
    basis = grid_dft_basis(n, 120, "freq", onesided=True)
    a, b = ngram_slice(values, n), ngram_slice(shifted, n)
    mag = np.diag(cosine_distance_matrix(magnitude_features(basis, a), magnitude_features(basis, b)))
    raw = np.diag(cosine_distance_matrix(a, b))
    live = np.linalg.norm(a, axis=1) > 1e-6
    assert np.max(mag[live]) < 1e-10
    assert np.median(raw[live]) > 0.5


def test_discover_returns_frame_coordinates():
    piece = planted_piece(2)
    n = 32
    basis = grid_dft_basis(n, piece.features.shape[1], "freq", onesided=True)
    feats = magnitude_features(basis, ngram_slice(piece.features, n))
    res = discover(feats, n)
    assert res.processed.shape == (feats.shape[0] - 9,) * 2
    assert all(s.occurrence_b[1] <= piece.features.shape[0] + 9 for s in res.sections)
