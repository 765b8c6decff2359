"""Repeated-section discovery on a processed self-similarity matrix.

Pipeline: n-gram magnitude features, reciprocal-cosine similarity, diagonal
smoothing with a ``k x k`` identity kernel, zeroed main diagonal,
max-normalisation and median centering, then thresholded diagonal runs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from invariant_cae.errors import ValidationError

EPS = 1e-8


@dataclass
class SimilarityMatrix:
    values: np.ndarray
    frame_hop_seconds: float = 1.0


@dataclass(frozen=True)
class RepeatedSection:
    occurrence_a: tuple
    occurrence_b: tuple
    score: float

    @property
    def lag(self) -> int:
        return self.occurrence_b[0] - self.occurrence_a[0]

    @property
    def length(self) -> int:
        return self.occurrence_a[1] - self.occurrence_a[0]


def cosine_distance_matrix(P, Q=None) -> np.ndarray:
    """Pairwise cosine distances; an all-zero row is at distance 1 from everything."""
    P = np.asarray(P, dtype=np.float64)
    Q = P if Q is None else np.asarray(Q, dtype=np.float64)
    np_ = np.linalg.norm(P, axis=1)
    nq = np.linalg.norm(Q, axis=1)
    Pn = P / np.where(np_ > 0, np_, 1.0)[:, None]
    Qn = Q / np.where(nq > 0, nq, 1.0)[:, None]
    d = 1.0 - np.clip(Pn @ Qn.T, -1.0, 1.0)
    d[np_ == 0, :] = 1.0
    d[:, nq == 0] = 1.0
    return np.maximum(d, 0.0)


def self_similarity(features, frame_hop_seconds: float = 1.0) -> SimilarityMatrix:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] < 2:
        raise ValidationError("self-similarity needs at least two feature rows")
    d = cosine_distance_matrix(features)
    # exact symmetry; the Gram product can differ in the last ulp
    d = 0.5 * (d + d.T)
    return SimilarityMatrix(1.0 / (d + EPS), frame_hop_seconds)


def diagonal_smooth(S, k: int) -> np.ndarray:
    """Valid-mode correlation with a ``k x k`` identity: ``out[i, j] = sum_t S[i+t, j+t]``."""
    S = np.asarray(S, dtype=np.float64)
    if k < 1:
        raise ValidationError("kernel size must be >= 1")
    K = S.shape[0]
    if k > K:
        raise ValidationError(f"kernel size {k} exceeds matrix size {K}")
    size = K - k + 1
    out = np.zeros((size, S.shape[1] - k + 1))
    for t in range(k):
        out += S[t : t + size, t : t + out.shape[1]]
    return out


def postprocess(S) -> np.ndarray:
    """Zero the main diagonal, divide by the max absolute entry, subtract the median."""
    S = np.array(S, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValidationError("postprocess expects a square matrix")
    np.fill_diagonal(S, 0.0)
    peak = np.max(np.abs(S))
    if peak == 0.0:
        return S
    S /= peak
    return S - np.median(S)


def _runs(mask: np.ndarray, max_gap: int):
    """Index runs of True entries, bridging gaps of at most ``max_gap`` False entries."""
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        return []
    runs = []
    start = prev = idx[0]
    for i in idx[1:]:
        if i - prev - 1 > max_gap:
            runs.append((start, prev))
            start = i
        prev = i
    runs.append((start, prev))
    return runs


def find_diagonals(S, threshold: float = 0.01, min_length: int = 10, max_gap: int = 2) -> list:
    """Thresholded runs along every super-diagonal, best-scoring first.

    Occurrences are half-open index ranges into the rows of ``S``.
    """
    S = np.asarray(S, dtype=np.float64)
    K = S.shape[0]
    sections = []
    for lag in range(1, K):
        diag = np.diagonal(S, offset=lag)
        for start, stop in _runs(diag > threshold, max_gap):
            length = stop - start + 1
            if length < min_length:
                continue
            score = float(np.mean(diag[start : stop + 1]))
            sections.append(
                RepeatedSection((int(start), int(stop + 1)), (int(start + lag), int(stop + 1 + lag)), score)
            )
    sections.sort(key=lambda s: (-s.score, s.occurrence_a, s.occurrence_b))
    return sections


def to_frames(section: RepeatedSection, ngram_size: int, kernel: int = 1, hop: int = 1) -> RepeatedSection:
    """Convert smoothed-matrix occurrences to the frame ranges they cover.

    A smoothed index ``i`` pools n-grams ``i .. i+kernel-1`` and is attributed
    to the n-gram at the kernel centre, which starts at frame ``i * hop``.
    """
    shift = (kernel - 1) // 2

    def span(occ):
        first, last = occ[0] + shift, occ[1] - 1 + shift
        return int(first * hop), int(last * hop + ngram_size)

    return RepeatedSection(span(section.occurrence_a), span(section.occurrence_b), section.score)


def interval_iou(x: tuple, y: tuple) -> float:
    inter = max(0, min(x[1], y[1]) - max(x[0], y[0]))
    union = max(x[1], y[1]) - min(x[0], y[0])
    return inter / union if union > 0 else 0.0


def pair_iou(found: RepeatedSection, truth: RepeatedSection) -> float:
    """IoU of an occurrence pair: the weaker of the two occurrence IoUs, in either order."""
    direct = min(interval_iou(found.occurrence_a, truth.occurrence_a), interval_iou(found.occurrence_b, truth.occurrence_b))
    swapped = min(interval_iou(found.occurrence_a, truth.occurrence_b), interval_iou(found.occurrence_b, truth.occurrence_a))
    return max(direct, swapped)


def evaluate_overlap(found, ground_truth, iou_threshold: float = 0.5):
    """Greedy one-to-one matching by pair IoU; returns ``(precision, recall, f1)``.

    With nothing found, precision is reported as 1 by convention.
    """
    if not 0.0 < iou_threshold <= 1.0:
        raise ValidationError("iou_threshold must lie in (0, 1]")
    if not ground_truth:
        raise ValidationError("recall is undefined for an empty ground truth")
    candidates = []
    for i, f in enumerate(found):
        for j, g in enumerate(ground_truth):
            iou = pair_iou(f, g)
            if iou >= iou_threshold:
                candidates.append((iou, i, j))
    candidates.sort(key=lambda c: (-c[0], c[1], c[2]))
    used_f, used_g = set(), set()
    for _, i, j in candidates:
        if i not in used_f and j not in used_g:
            used_f.add(i)
            used_g.add(j)
    matched = len(used_f)
    precision = matched / len(found) if found else 1.0
    recall = matched / len(ground_truth)
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


@dataclass
class DiscoveryResult:
    similarity: np.ndarray
    processed: np.ndarray
    sections: list
    ngram_size: int


def discover(
    features, ngram_size: int, kernel: int = 10, threshold: float = 0.01, min_length: int = 10, max_gap: int = 2, hop: int = 1
):
    """Run the full pipeline on per-n-gram feature rows (one row per n-gram start).

    Returned sections are in frame coordinates.
    """
    ssm = self_similarity(features)
    smoothed = diagonal_smooth(ssm.values, kernel)
    processed = postprocess(smoothed)
    found = find_diagonals(processed, threshold, min_length, max_gap)
    sections = [to_frames(s, ngram_size, kernel, hop) for s in found]
    return DiscoveryResult(ssm.values, processed, sections, ngram_size)
