"""DTW and FastDTW alignment with time-error reporting.

Both share one banded solver: every row ``i`` of the cost matrix is
restricted to a contiguous column range ``[lo[i], hi[i]]`` (the full matrix
for exact DTW).  Within a row the horizontal recursion is resolved in closed
form with a running minimum, so each row is a handful of vector operations.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field

import numpy as np

from invariant_cae.data_io import FeatureMatrix
from invariant_cae.discovery import cosine_distance_matrix
from invariant_cae.errors import ValidationError


@dataclass
class WarpingPath:
    pairs: np.ndarray
    cost: float

    def __len__(self):
        return len(self.pairs)


@dataclass
class AlignmentReport:
    q1: float
    median: float
    q3: float
    rate_50ms: float
    rate_250ms: float
    n_events: int = 0
    n_clamped: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class GroundTruthMap:
    events: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))

    def __post_init__(self):
        self.events = np.asarray(self.events, dtype=np.float64).reshape(-1, 2)
        if self.events.shape[0] > 1 and np.any(np.diff(self.events[:, 0]) <= 0):
            raise ValidationError("ground-truth events must be strictly increasing in time_a")

    @classmethod
    def load(cls, path) -> GroundTruthMap:
        rows = []
        with open(path, newline="") as fh:
            for lineno, row in enumerate(csv.reader(fh), start=1):
                if not row or row[0].lstrip().startswith("#"):
                    continue
                try:
                    rows.append((float(row[0]), float(row[1])))
                except (ValueError, IndexError):
                    if lineno == 1:
                        continue  # header
                    raise ValidationError(f"{path}: line {lineno}: expected two numeric columns") from None
        return cls(np.array(rows))

    def save(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["time_a", "time_b"])
            for a, b in self.events:
                writer.writerow([repr(float(a)), repr(float(b))])


def frame_distances(A, B, distance: str = "cosine") -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    if distance == "cosine":
        return cosine_distance_matrix(A, B)
    if distance == "euclidean":
        sq = np.sum(A**2, 1)[:, None] + np.sum(B**2, 1)[None, :] - 2.0 * A @ B.T
        return np.sqrt(np.maximum(sq, 0.0))
    raise ValidationError(f"unknown distance {distance!r}")


def _check_inputs(A, B):
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    if A.shape[0] < 1 or B.shape[0] < 1 or A.size == 0 or B.size == 0:
        raise ValidationError("cannot align an empty sequence")
    if A.shape[1] != B.shape[1]:
        raise ValidationError(f"feature dimensions differ: {A.shape[1]} vs {B.shape[1]}")
    return A, B


def _banded_dtw(A, B, lo, hi, distance) -> WarpingPath:
    ta, tb = A.shape[0], B.shape[0]
    rows_cost = []
    rows_acc = []
    prev_lo = prev_hi = None
    prev_acc = None
    for i in range(ta):
        cols = slice(lo[i], hi[i] + 1)
        c = frame_distances(A[i : i + 1], B[cols], distance)[0]
        j = np.arange(lo[i], hi[i] + 1)
        if i == 0:
            entry = np.full(c.shape, np.inf)
            if lo[0] == 0:
                entry[0] = c[0]
        else:
            up = np.full(c.shape, np.inf)
            diag = np.full(c.shape, np.inf)
            inside = (j >= prev_lo) & (j <= prev_hi)
            up[inside] = prev_acc[j[inside] - prev_lo]
            inside_d = (j - 1 >= prev_lo) & (j - 1 <= prev_hi)
            diag[inside_d] = prev_acc[j[inside_d] - 1 - prev_lo]
            entry = c + np.minimum(up, diag)
        # acc[j] = min over m <= j of entry[m] + c[m+1..j]
        csum = np.cumsum(c)
        acc = csum + np.minimum.accumulate(entry - csum)
        rows_cost.append(c)
        rows_acc.append(acc)
        prev_lo, prev_hi, prev_acc = lo[i], hi[i], acc

    def acc_at(i, j):
        if i < 0 or j < lo[i] or j > hi[i]:
            return np.inf
        return rows_acc[i][j - lo[i]]

    if not np.isfinite(acc_at(ta - 1, tb - 1)):
        raise ValidationError("search window does not connect the two sequence ends")
    i, j = ta - 1, tb - 1
    path = [(i, j)]
    while i > 0 or j > 0:
        options = ((acc_at(i - 1, j - 1), i - 1, j - 1), (acc_at(i - 1, j), i - 1, j), (acc_at(i, j - 1), i, j - 1))
        _, i, j = min(options, key=lambda o: o[0])
        path.append((i, j))
    path.reverse()
    pairs = np.array(path, dtype=np.int64)
    cost = float(sum(rows_cost[p][q - lo[p]] for p, q in pairs))
    return WarpingPath(pairs, cost)


def dtw(A, B, distance: str = "cosine") -> WarpingPath:
    """Exact DTW with steps (1,0), (0,1), (1,1); cost is the summed frame distance."""
    A, B = _check_inputs(A, B)
    ta, tb = A.shape[0], B.shape[0]
    return _banded_dtw(A, B, np.zeros(ta, dtype=np.int64), np.full(ta, tb - 1, dtype=np.int64), distance)


def coarsen(X) -> np.ndarray:
    """Halve the frame rate by averaging adjacent frame pairs (a trailing odd frame is kept)."""
    X = np.asarray(X, dtype=np.float64)
    even = X.shape[0] // 2 * 2
    out = 0.5 * (X[0:even:2] + X[1:even:2])
    if X.shape[0] % 2:
        out = np.vstack([out, X[-1:]])
    return out


def expand_window(pairs, ta: int, tb: int, radius: int):
    """Project a coarse path to full resolution and widen it by ``radius`` cells (Chebyshev)."""
    lo = np.full(ta, tb, dtype=np.int64)
    hi = np.full(ta, -1, dtype=np.int64)
    for i, j in pairs:
        for di in (0, 1):
            r = min(2 * i + di, ta - 1)
            lo[r] = min(lo[r], 2 * j)
            hi[r] = max(hi[r], min(2 * j + 1, tb - 1))
    # rows the projection missed inherit their neighbours' range
    for r in range(1, ta):
        if hi[r] < 0:
            lo[r], hi[r] = lo[r - 1], hi[r - 1]
    if radius > 0:
        pad_lo = np.concatenate([np.full(radius, lo[0]), lo, np.full(radius, lo[-1])])
        pad_hi = np.concatenate([np.full(radius, hi[0]), hi, np.full(radius, hi[-1])])
        win = np.lib.stride_tricks.sliding_window_view
        lo = win(pad_lo, 2 * radius + 1).min(axis=1) - radius
        hi = win(pad_hi, 2 * radius + 1).max(axis=1) + radius
    lo = np.clip(lo, 0, tb - 1)
    hi = np.clip(hi, 0, tb - 1)
    lo[0] = 0
    hi[-1] = tb - 1
    # consecutive ranges must overlap or touch diagonally for a connected band
    hi = np.maximum.accumulate(hi)
    lo = np.minimum.accumulate(lo[::-1])[::-1]
    return lo, hi


def fastdtw(A, B, radius: int = 50, distance: str = "cosine") -> WarpingPath:
    """Multiscale approximate DTW (coarsen, solve, project, refine within ``radius``)."""
    if radius < 0:
        raise ValidationError("radius must be >= 0")
    A, B = _check_inputs(A, B)
    min_size = radius + 2
    if A.shape[0] <= min_size or B.shape[0] <= min_size:
        return dtw(A, B, distance)
    coarse = fastdtw(coarsen(A), coarsen(B), radius, distance)
    lo, hi = expand_window(coarse.pairs, A.shape[0], B.shape[0], radius)
    return _banded_dtw(A, B, lo, hi, distance)


def check_path(path: WarpingPath, ta: int, tb: int):
    """Raise if the path breaks the boundary, monotonicity or step-set rules."""
    p = np.asarray(path.pairs)
    if p.ndim != 2 or p.shape[1] != 2 or len(p) == 0:
        raise ValidationError("path must be a non-empty list of index pairs")
    if tuple(p[0]) != (0, 0) or tuple(p[-1]) != (ta - 1, tb - 1):
        raise ValidationError(f"path must run from (0, 0) to ({ta - 1}, {tb - 1})")
    steps = np.diff(p, axis=0)
    ok = ((steps == [1, 0]) | (steps == [0, 1]) | (steps == [1, 1])).all(axis=1)
    if not np.all(ok):
        raise ValidationError(f"illegal step at path index {int(np.flatnonzero(~ok)[0]) + 1}")


def path_time_map(path: WarpingPath, hop_a: float, hop_b: float):
    """Knots of the piecewise-linear a-time -> b-time map (repeated a-indices averaged)."""
    p = np.asarray(path.pairs)
    ia, inverse = np.unique(p[:, 0], return_inverse=True)
    jb = np.bincount(inverse, weights=p[:, 1]) / np.bincount(inverse)
    return ia * hop_a, jb * hop_b


def evaluate_alignment(path: WarpingPath, hop_a: float, hop_b: float, gt: GroundTruthMap) -> AlignmentReport:
    events = gt.events
    if events.shape[0] == 0:
        raise ValidationError("ground truth is empty")
    knots_a, knots_b = path_time_map(path, hop_a, hop_b)
    t_a = events[:, 0]
    clamped = int(np.sum((t_a < knots_a[0]) | (t_a > knots_a[-1])))
    mapped = np.interp(np.clip(t_a, knots_a[0], knots_a[-1]), knots_a, knots_b)
    err = np.abs(mapped - events[:, 1])
    q1, med, q3 = np.percentile(err, [25, 50, 75])
    # tolerance absorbs float noise in seconds computed from frame indices
    tol = 1e-9
    return AlignmentReport(
        q1=float(q1),
        median=float(med),
        q3=float(q3),
        rate_50ms=float(np.mean(err <= 0.05 + tol)),
        rate_250ms=float(np.mean(err <= 0.25 + tol)),
        n_events=int(err.size),
        n_clamped=clamped,
    )


def tempo_scale(X: FeatureMatrix, factor: float) -> FeatureMatrix:
    """Resample the time axis to ``round(T / factor)`` frames by linear interpolation."""
    if not factor > 0:
        raise ValidationError("tempo factor must be > 0")
    values = X.values
    t = values.shape[0]
    t_new = int(round(t / factor))
    if t_new < 2:
        raise ValidationError(f"tempo factor {factor} leaves {t_new} frame(s)")
    if t_new == t:
        return FeatureMatrix(values.copy(), X.frame_hop_seconds, X.meta)
    pos = np.linspace(0.0, t - 1, t_new)
    left = np.floor(pos).astype(np.int64)
    right = np.minimum(left + 1, t - 1)
    frac = (pos - left)[:, None]
    out = (1.0 - frac) * values[left] + frac * values[right]
    return FeatureMatrix(out, X.frame_hop_seconds, X.meta)
