"""Complex basis, polar coding and the swapped-magnitude reconstruction.

A basis of ``M`` complex vectors over ``R^N`` is stored as two real ``M x N``
matrices.  The polar form uses ``phase = atan2(re, im)``, so that
``re = r * sin(phase)`` and ``im = r * cos(phase)``; reconstruction follows
the same convention (``w_re`` carries the sine path, ``w_im`` the cosine path).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from invariant_cae.errors import FormatError, ShapeError, ValidationError

TWO_PI = 2.0 * np.pi
MODEL_MAGIC = b"CAE1"


@dataclass
class ComplexBasis:
    w_re: np.ndarray
    w_im: np.ndarray
    # standardization applied to inputs before projection (identity by default)
    mean: np.ndarray | None = None
    std: np.ndarray | None = None

    def __post_init__(self):
        self.w_re = np.array(self.w_re, dtype=np.float64, ndmin=2)
        self.w_im = np.array(self.w_im, dtype=np.float64, ndmin=2)
        if self.w_re.shape != self.w_im.shape:
            raise ShapeError(f"w_re {self.w_re.shape} and w_im {self.w_im.shape} differ")
        if not (np.all(np.isfinite(self.w_re)) and np.all(np.isfinite(self.w_im))):
            raise ValidationError("basis contains non-finite entries")
        n = self.n_input
        self.mean = np.zeros(n) if self.mean is None else np.asarray(self.mean, dtype=np.float64)
        self.std = np.ones(n) if self.std is None else np.asarray(self.std, dtype=np.float64)
        if self.mean.shape != (n,) or self.std.shape != (n,):
            raise ShapeError(f"standardization vectors must have length {n}")

    @property
    def n_basis(self) -> int:
        return self.w_re.shape[0]

    @property
    def n_input(self) -> int:
        return self.w_re.shape[1]

    def row_norms(self) -> np.ndarray:
        return np.sqrt(np.sum(self.w_re**2, axis=1) + np.sum(self.w_im**2, axis=1))

    def copy(self) -> ComplexBasis:
        return ComplexBasis(self.w_re.copy(), self.w_im.copy(), self.mean.copy(), self.std.copy())

    def standardize_input(self, X):
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.std

    @classmethod
    def random(cls, n_basis: int, n_input: int, rng: np.random.Generator) -> ComplexBasis:
        bound = 1.0 / np.sqrt(n_input)
        w_re = rng.uniform(-bound, bound, size=(n_basis, n_input))
        w_im = rng.uniform(-bound, bound, size=(n_basis, n_input))
        return cls(w_re, w_im)

    def save(self, path, config: dict | None = None):
        """Write the binary model container and, if given, a JSON config sidecar."""
        path = Path(path)
        m, n = self.w_re.shape
        with open(path, "wb") as fh:
            fh.write(MODEL_MAGIC)
            fh.write(struct.pack("<II", m, n))
            for arr in (self.w_re, self.w_im, self.mean, self.std):
                fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        if config is not None:
            sidecar = path.with_suffix(path.suffix + ".json")
            sidecar.write_text(json.dumps(config, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> ComplexBasis:
        data = Path(path).read_bytes()
        if len(data) < 12:
            raise FormatError(f"{path}: truncated header at byte {len(data)}")
        if data[:4] != MODEL_MAGIC:
            raise FormatError(f"{path}: bad magic {data[:4]!r} at byte 0")
        m, n = struct.unpack_from("<II", data, 4)
        expected = 12 + 8 * (2 * m * n + 2 * n)
        if len(data) != expected:
            raise FormatError(f"{path}: expected {expected} bytes for M={m}, N={n}, got {len(data)}")
        flat = np.frombuffer(data, dtype="<f8", offset=12).astype(np.float64)
        w_re = flat[: m * n].reshape(m, n)
        w_im = flat[m * n : 2 * m * n].reshape(m, n)
        mean = flat[2 * m * n : 2 * m * n + n]
        std = flat[2 * m * n + n :]
        return cls(w_re, w_im, mean, std)


@dataclass
class PolarCode:
    phase: np.ndarray
    magnitude: np.ndarray = field(repr=False)


def dft_basis(n: int) -> ComplexBasis:
    """Unitary DFT rows: ``w_re[j, k] = cos(2 pi j k / n) / sqrt(n)``, ``w_im = -sin(...)``."""
    j = np.arange(n)
    angle = TWO_PI * np.outer(j, j) / n
    return ComplexBasis(np.cos(angle) / np.sqrt(n), -np.sin(angle) / np.sqrt(n))


def grid_dft_basis(frames: int, bins: int, axis: str = "freq", onesided: bool = False) -> ComplexBasis:
    """DFT basis for time-major flattened ``frames x bins`` grids.

    ``axis="freq"`` transforms each frame along its bins (invariant to circular
    bin shifts), ``"time"`` along frames, ``"both"`` is the 2-D DFT.  With
    ``onesided`` the conjugate-redundant rows of each transformed axis are
    dropped (real inputs only).
    """
    eye_t = np.eye(frames)
    eye_f = np.eye(bins)
    dt = dft_basis(frames)
    df = dft_basis(bins)
    ft = dt.w_re + 1j * dt.w_im
    ff = df.w_re + 1j * df.w_im
    if onesided:
        ft = ft[: frames // 2 + 1]
        ff = ff[: bins // 2 + 1]
    if axis == "freq":
        w = np.kron(eye_t, ff)
    elif axis == "time":
        w = np.kron(ft, eye_f)
    elif axis == "both":
        w = np.kron(ft, ff)
    else:
        raise ValidationError(f"unknown axis {axis!r}")
    return ComplexBasis(w.real.copy(), w.imag.copy())


def _as_batch(basis: ComplexBasis, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != basis.n_input:
        raise ShapeError(f"input length {x.shape[-1]} does not match basis N={basis.n_input}")
    if not np.all(np.isfinite(x)):
        raise ValidationError("input contains non-finite values")
    return x


def project(basis: ComplexBasis, x):
    """Real and imaginary projection ``(w_re @ x, w_im @ x)``; accepts one vector or rows."""
    x = _as_batch(basis, x)
    return x @ basis.w_re.T, x @ basis.w_im.T


def polar_encode(re, im) -> PolarCode:
    re = np.asarray(re, dtype=np.float64)
    im = np.asarray(im, dtype=np.float64)
    if re.shape != im.shape:
        raise ShapeError(f"re {re.shape} and im {im.shape} differ")
    phase = np.mod(np.arctan2(re, im), TWO_PI)
    # mod can round 2pi - tiny up to exactly 2pi
    phase = np.where(phase >= TWO_PI, 0.0, phase)
    return PolarCode(phase=phase, magnitude=np.hypot(re, im))


def reconstruct_swapped(basis: ComplexBasis, phase_own, magnitude_other) -> np.ndarray:
    phase_own = np.asarray(phase_own, dtype=np.float64)
    magnitude_other = np.asarray(magnitude_other, dtype=np.float64)
    if phase_own.shape != magnitude_other.shape or phase_own.shape[-1] != basis.n_basis:
        raise ShapeError(
            f"phase {phase_own.shape} / magnitude {magnitude_other.shape} incompatible with M={basis.n_basis}"
        )
    u = magnitude_other * np.sin(phase_own)
    v = magnitude_other * np.cos(phase_own)
    return u @ basis.w_re + v @ basis.w_im


def encode(basis: ComplexBasis, X) -> PolarCode:
    return polar_encode(*project(basis, X))


def magnitude_features(basis: ComplexBasis, X) -> np.ndarray:
    """Magnitude of the complex projection of every row of ``X``."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    re, im = project(basis, X)
    return np.hypot(re, im)


def wrap_phase(d):
    """Map angles into ``(-pi, pi]``."""
    return np.pi - np.mod(np.pi - np.asarray(d, dtype=np.float64), TWO_PI)


def phase_difference(basis: ComplexBasis, x, y) -> np.ndarray:
    """Wrapped ``phase(x) - phase(y)``; works row-wise on batches."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeError(f"x {x.shape} and y {y.shape} differ")
    return wrap_phase(encode(basis, x).phase - encode(basis, y).phase)
