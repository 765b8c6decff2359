"""Transformations and transform-pair sampling.

Shifts along grid axes zero-fill vacated cells; only ``circular_shift_1d`` is
an exact permutation.  Rotations use bilinear interpolation with a zero
background.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from invariant_cae.errors import ParameterError, ValidationError

KINDS = ("circular_shift_1d", "pitch_shift", "time_shift", "rotate_2d", "compose")


@dataclass(frozen=True)
class TransformSpec:
    kind: str
    low: float = 0
    high: float = 0
    grid: tuple = ()
    parts: tuple = field(default=())

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"unknown transform kind {self.kind!r}")
        if self.kind == "compose":
            if not self.parts:
                raise ParameterError("compose needs at least one part")
            return
        if self.kind == "rotate_2d":
            if not self.low < self.high:
                raise ParameterError("angle interval must be non-empty")
        elif self.low > self.high:
            raise ParameterError("parameter range must be non-empty")
        if any(int(g) <= 0 for g in self.grid):
            raise ParameterError("grid dimensions must be positive")

    @property
    def shape(self) -> tuple:
        if self.kind == "compose":
            return self.parts[0].shape
        return tuple(int(g) for g in self.grid)

    def draw(self, rng: np.random.Generator, size: int):
        """Draw ``size`` parameters; compose kinds give one column per part."""
        if self.kind == "compose":
            return np.stack([p.draw(rng, size) for p in self.parts], axis=1)
        if self.kind == "rotate_2d":
            return rng.uniform(self.low, self.high, size=size)
        return rng.integers(int(self.low), int(self.high) + 1, size=size)

    def apply(self, x, param):
        """Apply to one sample given in grid shape (or flat for 1-D shifts)."""
        if self.kind == "circular_shift_1d":
            return circular_shift_1d(x, int(param))
        if self.kind == "pitch_shift":
            return pitch_shift(x, int(param))
        if self.kind == "time_shift":
            return time_shift(x, int(param))
        if self.kind == "rotate_2d":
            return rotate_2d(x, float(param))
        for part, value in zip(self.parts, np.atleast_1d(param)):
            x = part.apply(x, value)
        return x

    def to_flat(self, prefix: str = "transform") -> dict:
        """Flat key=value form for run config files."""
        if self.kind == "compose":
            out = {f"{prefix}.kind": "compose"}
            for k, part in enumerate(self.parts):
                out.update(part.to_flat(f"{prefix}.{k}"))
            return out
        return {
            f"{prefix}.kind": self.kind,
            f"{prefix}.low": self.low,
            f"{prefix}.high": self.high,
            f"{prefix}.grid": "x".join(str(int(g)) for g in self.grid),
        }


def circular_shift_1d(x, k: int) -> np.ndarray:
    """``y[i] = x[(i - k) mod N]``."""
    return np.roll(np.asarray(x), int(k), axis=-1)


def _axis_shift(x, shift: int, axis: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x)
    n = x.shape[axis]
    src = [slice(None)] * x.ndim
    dst = [slice(None)] * x.ndim
    if shift >= 0:
        src[axis], dst[axis] = slice(0, n - shift), slice(shift, n)
    else:
        src[axis], dst[axis] = slice(-shift, n), slice(0, n + shift)
    out[tuple(dst)] = x[tuple(src)]
    return out


def pitch_shift(ngram, bins: int) -> np.ndarray:
    """Shift every frame of a ``frames x bins`` n-gram along frequency, zero-filling."""
    ngram = np.asarray(ngram, dtype=np.float64)
    if abs(bins) >= ngram.shape[-1]:
        raise ParameterError(f"|bins|={abs(bins)} must be < F={ngram.shape[-1]}")
    return _axis_shift(ngram, int(bins), axis=ngram.ndim - 1)


def time_shift(ngram, frames: int) -> np.ndarray:
    ngram = np.asarray(ngram, dtype=np.float64)
    if abs(frames) >= ngram.shape[-2]:
        raise ParameterError(f"|frames|={abs(frames)} must be < T={ngram.shape[-2]}")
    return _axis_shift(ngram, int(frames), axis=ngram.ndim - 2)


def rotate_images(images, angles) -> np.ndarray:
    """Rotate a ``B x H x W`` stack counter-clockwise (as displayed) about each centre."""
    images = np.asarray(images, dtype=np.float64)
    angles = np.broadcast_to(np.asarray(angles, dtype=np.float64), images.shape[:1])
    if not np.all(np.isfinite(angles)):
        raise ParameterError("rotation angle must be finite")
    n_img, h, w = images.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(h) - cy, np.arange(w) - cx, indexing="ij")
    cos = np.cos(angles)[:, None, None]
    sin = np.sin(angles)[:, None, None]
    # inverse map: output pixel -> source location
    src_x = cos * xx - sin * yy + cx
    src_y = sin * xx + cos * yy + cy
    # one zero border ring lets out-of-range reads land on zeros after clipping
    padded = np.zeros((n_img, h + 2, w + 2))
    padded[:, 1:-1, 1:-1] = images
    flat = padded.reshape(n_img, -1)
    x0 = np.floor(src_x)
    y0 = np.floor(src_y)
    fx = src_x - x0
    fy = src_y - y0
    xi = np.clip(x0.astype(np.int64) + 1, 0, w + 1)
    yi = np.clip(y0.astype(np.int64) + 1, 0, h + 1)
    xj = np.clip(x0.astype(np.int64) + 2, 0, w + 1)
    yj = np.clip(y0.astype(np.int64) + 2, 0, h + 1)
    row = w + 2

    def gather(yy_, xx_):
        return np.take_along_axis(flat, (yy_ * row + xx_).reshape(n_img, -1), axis=1).reshape(n_img, h, w)

    out = (1 - fy) * ((1 - fx) * gather(yi, xi) + fx * gather(yi, xj)) + fy * (
        (1 - fx) * gather(yj, xi) + fx * gather(yj, xj)
    )
    return out


def rotate_2d(img, theta: float) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2 or min(img.shape) <= 0:
        raise ValidationError("rotate_2d expects a non-empty 2-D image")
    if not np.isfinite(theta):
        raise ParameterError("rotation angle must be finite")
    if np.mod(theta, 2 * np.pi) == 0.0:
        return img.copy()
    return rotate_images(img[None], theta)[0]


@dataclass
class TransformPairBatch:
    a: np.ndarray
    b: np.ndarray
    params: np.ndarray

    def __post_init__(self):
        if self.a.shape != self.b.shape:
            raise ValidationError(f"pair members differ in shape: {self.a.shape} vs {self.b.shape}")


def _apply_many(spec: TransformSpec, samples, params) -> np.ndarray:
    if spec.kind == "rotate_2d":
        return rotate_images(samples, params)
    if spec.kind == "circular_shift_1d":
        out = np.empty_like(samples, dtype=np.float64)
        for k, (x, p) in enumerate(zip(samples, params)):
            out[k] = circular_shift_1d(x, int(p))
        return out
    return np.stack([spec.apply(x, p) for x, p in zip(samples, params)])


def sample_pair(dataset, spec: TransformSpec, scheme: str, rng: np.random.Generator, batch_size: int = 1):
    """Draw a batch of transform pairs from ``dataset`` (rows in grid shape or flat).

    ``scheme="double"`` gives ``(psi_i(x), psi_j(psi_i(x)))``, ``"anchored"``
    gives ``(x, psi(x))``.  ``params`` holds ``(i, j)`` or ``psi`` per row.
    """
    dataset = np.asarray(dataset, dtype=np.float64)
    if dataset.shape[0] == 0:
        raise ValidationError("dataset is empty")
    if scheme not in ("double", "anchored"):
        raise ParameterError(f"unknown pairing scheme {scheme!r}")
    grid = spec.shape or dataset.shape[1:]
    idx = rng.integers(0, dataset.shape[0], size=batch_size)
    x = dataset[idx].reshape((batch_size,) + tuple(grid))
    if scheme == "anchored":
        p = spec.draw(rng, batch_size)
        a, b, params = x, _apply_many(spec, x, p), p
    else:
        pi = spec.draw(rng, batch_size)
        pj = spec.draw(rng, batch_size)
        a = _apply_many(spec, x, pi)
        b = _apply_many(spec, a, pj)
        params = np.stack([pi, pj], axis=1)
    return TransformPairBatch(a.reshape(batch_size, -1), b.reshape(batch_size, -1), params)


class PairSampler:
    """Callable ``(batch_size, rng) -> TransformPairBatch`` for training loops."""

    def __init__(self, dataset, spec: TransformSpec, scheme: str = "double"):
        self.dataset = np.asarray(dataset, dtype=np.float64)
        if self.dataset.shape[0] == 0:
            raise ValidationError("dataset is empty")
        self.spec = spec
        self.scheme = scheme

    @property
    def n_input(self) -> int:
        return int(np.prod(self.dataset.shape[1:]))

    def __call__(self, batch_size, rng):
        return sample_pair(self.dataset, self.spec, self.scheme, rng, batch_size)
