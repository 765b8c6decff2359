"""Feature and image ingestion, standardization, n-gram slicing and synthetic data.

Binary layouts:

``FTM1``
    ``b"FTM1"``, little-endian ``u32 T``, ``u32 F``, ``f64 hop_seconds``,
    then ``T*F`` little-endian f64 values, row-major.
IDX
    The published MNIST layout: big-endian magic ``0x00000803`` (images) or
    ``0x00000801`` (labels), big-endian u32 dimensions, u8 payload.  Files
    ending in ``.gz`` are decompressed transparently.
"""

from __future__ import annotations

import gzip
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from invariant_cae.errors import FormatError, ParameterError, ShapeError, ValidationError
from invariant_cae.transforms import pitch_shift

FEATURE_MAGIC = b"FTM1"
# 1984-sample hop at 22.05 kHz
DEFAULT_HOP_SECONDS = 1984 / 22050
STD_FLOOR = 1e-8


@dataclass
class FeatureMatrix:
    values: np.ndarray
    frame_hop_seconds: float = DEFAULT_HOP_SECONDS
    meta: str = ""

    def __post_init__(self):
        self.values = np.array(self.values, dtype=np.float64, ndmin=2)
        if self.values.ndim != 2 or min(self.values.shape) < 1:
            raise ValidationError(f"feature matrix must be T x F with T, F >= 1, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValidationError("feature matrix contains non-finite values")
        if not self.frame_hop_seconds > 0:
            raise ValidationError("frame_hop_seconds must be > 0")

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def n_bins(self) -> int:
        return self.values.shape[1]


@dataclass
class StandardizationStats:
    mean: np.ndarray
    std: np.ndarray


@dataclass
class LabeledImages:
    images: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if self.images.ndim != 3 or self.images.shape[0] != self.labels.shape[0]:
            raise ShapeError(f"images {self.images.shape} and labels {self.labels.shape} are inconsistent")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() > 9):
            raise ValidationError("labels must lie in [0, 9]")


def save_feature_matrix(fm: FeatureMatrix, path):
    path = Path(path)
    if path.suffix.lower() == ".csv":
        with open(path, "w") as fh:
            fh.write(f"# hop_seconds={fm.frame_hop_seconds!r}\n")
            for row in fm.values:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")
        return
    t, f = fm.values.shape
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<IId", t, f, fm.frame_hop_seconds))
        fh.write(np.ascontiguousarray(fm.values, dtype="<f8").tobytes())


def _load_ftm(data: bytes, path) -> FeatureMatrix:
    if len(data) < 20:
        raise FormatError(f"{path}: truncated FTM1 header at byte {len(data)}")
    t, f, hop = struct.unpack_from("<IId", data, 4)
    expected = 20 + 8 * t * f
    if len(data) != expected:
        raise FormatError(f"{path}: payload ends at byte {len(data)}, expected {expected} for T={t}, F={f}")
    values = np.frombuffer(data, dtype="<f8", offset=20).astype(np.float64).reshape(t, f)
    return FeatureMatrix(values, hop, meta=str(path))


def _load_csv(text: str, path, hop_seconds) -> FeatureMatrix:
    rows = []
    width = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            if key.strip() == "hop_seconds":
                try:
                    hop_seconds = float(value)
                except ValueError:
                    raise FormatError(f"{path}: line {lineno}: bad hop_seconds {value!r}") from None
            continue
        try:
            row = [float(v) for v in line.split(",")]
        except ValueError:
            raise FormatError(f"{path}: line {lineno}: non-numeric entry") from None
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise FormatError(f"{path}: line {lineno}: expected {width} columns, got {len(row)}")
        rows.append(row)
    if not rows:
        raise FormatError(f"{path}: no frames found")
    return FeatureMatrix(np.array(rows), hop_seconds, meta=str(path))


def load_feature_matrix(path, hop_seconds: float = DEFAULT_HOP_SECONDS) -> FeatureMatrix:
    """Load an ``FTM1`` container or a CSV with one frame per row."""
    data = Path(path).read_bytes()
    if not data:
        raise FormatError(f"{path}: empty file at byte 0")
    if data[:4] == FEATURE_MAGIC:
        return _load_ftm(data, path)
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path}: not FTM1 and not text (byte {exc.start})") from None
    return _load_csv(text, path, hop_seconds)


def standardize(X, stats: StandardizationStats | None = None):
    """Per-column standardization; fits the statistics when none are given."""
    X = np.asarray(X, dtype=np.float64)
    if stats is None:
        mean = X.mean(axis=0)
        std = np.maximum(X.std(axis=0), STD_FLOOR)
        stats = StandardizationStats(mean, std)
    elif stats.mean.shape[-1] != X.shape[-1]:
        raise ShapeError(f"stats have {stats.mean.shape[-1]} columns, data has {X.shape[-1]}")
    return (X - stats.mean) / stats.std, stats


def ngram_count(n_frames: int, n: int, hop_frames: int = 1) -> int:
    return (n_frames - n) // hop_frames + 1


def ngram_slice(X, n: int, hop_frames: int = 1) -> np.ndarray:
    """Windows of ``n`` frames starting every ``hop_frames``, flattened time-major."""
    X = np.asarray(X, dtype=np.float64)
    t, f = X.shape
    if n < 1 or hop_frames < 1:
        raise ValidationError("n and hop_frames must be >= 1")
    if t < n:
        raise ValidationError(f"sequence of {t} frames is shorter than n-gram size {n}")
    windows = np.lib.stride_tricks.sliding_window_view(X, (n, f))[::hop_frames, 0]
    return windows.reshape(windows.shape[0], n * f).copy()


def input_dropout(x, p: float, rng: np.random.Generator) -> np.ndarray:
    """Inverted dropout: zero each element with probability ``p``, scale survivors by ``1/(1-p)``."""
    if not 0.0 <= p < 1.0:
        raise ParameterError("dropout probability must lie in [0, 1)")
    x = np.asarray(x, dtype=np.float64)
    if p == 0.0:
        return x.copy()
    keep = rng.random(x.shape) >= p
    return np.where(keep, x / (1.0 - p), 0.0)


def _open_maybe_gz(path) -> bytes:
    path = Path(path)
    data = path.read_bytes()
    if path.suffix == ".gz" or data[:2] == b"\x1f\x8b":
        try:
            data = gzip.decompress(data)
        except (OSError, EOFError) as exc:
            raise FormatError(f"{path}: corrupt gzip stream ({exc})") from None
    return data


def _parse_idx(data: bytes, path, magic: int, ndim: int) -> np.ndarray:
    header = 4 + 4 * ndim
    if len(data) < header:
        raise FormatError(f"{path}: truncated IDX header at byte {len(data)}")
    (found,) = struct.unpack_from(">I", data, 0)
    if found != magic:
        raise FormatError(f"{path}: wrong magic 0x{found:08x} at byte 0, expected 0x{magic:08x}")
    dims = struct.unpack_from(">" + "I" * ndim, data, 4)
    size = int(np.prod(dims))
    if len(data) < header + size:
        raise FormatError(f"{path}: truncated payload at byte {len(data)}, expected {header + size}")
    return np.frombuffer(data, dtype=np.uint8, count=size, offset=header).reshape(dims)


def load_idx(path_images, path_labels) -> LabeledImages:
    images = _parse_idx(_open_maybe_gz(path_images), path_images, 0x00000803, 3)
    labels = _parse_idx(_open_maybe_gz(path_labels), path_labels, 0x00000801, 1)
    if images.shape[0] != labels.shape[0]:
        raise FormatError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    return LabeledImages(images.astype(np.float64) / 255.0, labels.astype(np.int64))


def save_idx(images, labels, path_images, path_labels):
    """Write u8 IDX files; float images in [0, 1] are scaled to 0..255."""
    images = np.asarray(images)
    if images.dtype != np.uint8:
        images = np.clip(np.rint(images * 255.0), 0, 255).astype(np.uint8)
    labels = np.asarray(labels).astype(np.uint8)
    for path, magic, arr in ((path_images, 0x00000803, images), (path_labels, 0x00000801, labels)):
        blob = struct.pack(">I", magic) + struct.pack(">" + "I" * arr.ndim, *arr.shape) + arr.tobytes()
        if str(path).endswith(".gz"):
            blob = gzip.compress(blob, mtime=0)
        Path(path).write_bytes(blob)


def harmonic_offsets(bins_per_octave: int, n_harmonics: int) -> np.ndarray:
    """Bin offsets of the first partials of a harmonic tone on a log-frequency axis."""
    return np.rint(bins_per_octave * np.log2(np.arange(1, n_harmonics + 1))).astype(np.int64)


def synth_cqt_like(
    seed: int,
    T: int,
    F: int,
    n_events: int,
    plant: tuple | None = None,
    pitch_margin: int = 24,
    bins_per_octave: int = 24,
    n_harmonics: int = 4,
    hop_seconds: float = DEFAULT_HOP_SECONDS,
) -> FeatureMatrix:
    """Non-negative spectrogram-like matrix made of harmonic note events.

    Fundamentals are kept ``pitch_margin`` bins away from both edges (including
    the highest partial), so bin shifts up to that size move no energy out of
    range.  ``plant=(src_start, dst_start, length, shift)`` overwrites frames
    ``[dst_start, dst_start+length)`` with the source segment shifted by
    ``shift`` bins.
    """
    if min(T, F, n_events) < 1:
        raise ValidationError("T, F and n_events must be >= 1")
    rng = np.random.default_rng(seed)
    offsets = harmonic_offsets(bins_per_octave, n_harmonics)
    gains = 1.0 / np.arange(1, n_harmonics + 1)
    lo, hi = pitch_margin, F - pitch_margin - offsets[-1]
    if hi <= lo:
        raise ValidationError(f"F={F} too small for pitch margin {pitch_margin}")
    values = np.zeros((T, F))
    t_axis = np.arange(T)
    onsets = []
    for _ in range(n_events):
        onset = rng.integers(0, T)
        duration = rng.integers(2, 12)
        f0 = rng.integers(lo, hi)
        amp = rng.uniform(0.3, 1.0)
        rel = t_axis - onset
        # short linear attack, exponential decay, cut after the note ends
        env = np.where(rel < 0, 0.0, np.minimum(1.0, (rel + 1) / 2.0) * np.exp(-rel / (duration + 1.0)))
        env[rel > 2 * duration] = 0.0
        onsets.append(int(onset))
        for offset, gain in zip(offsets, gains):
            values[:, f0 + offset] += amp * gain * env
    meta = {"seed": seed, "n_events": n_events, "onsets": sorted(onsets)}
    if plant is not None:
        src, dst, length, shift = (int(v) for v in plant)
        if abs(shift) > pitch_margin:
            raise ValidationError(f"shift {shift} exceeds pitch margin {pitch_margin}")
        if src < 0 or dst < 0 or max(src, dst) + length > T:
            raise ValidationError("planted segment out of range")
        if src < dst < src + length or dst < src < dst + length:
            raise ValidationError("planted segments overlap")
        values[dst : dst + length] = pitch_shift(values[src : src + length], shift)
        meta["plant"] = [src, dst, length, shift]
    return FeatureMatrix(values, hop_seconds, meta=json.dumps(meta))


def synth_signals(seed: int, n_samples: int, n: int, exponent: float = 0.5) -> np.ndarray:
    """Random real signals with amplitude spectrum ``1 / (1 + f) ** exponent`` and random phases.

    Distinct per-frequency energies keep the circular-shift eigenspaces
    separable, which a flat (white) spectrum does not.
    """
    rng = np.random.default_rng(seed)
    freqs = np.arange(n // 2 + 1)
    amp = 1.0 / (1.0 + freqs) ** exponent
    spectrum = (rng.normal(size=(n_samples, freqs.size)) + 1j * rng.normal(size=(n_samples, freqs.size))) * amp
    x = np.fft.irfft(spectrum, n=n, axis=1)
    # expected per-sample variance: interior bins count twice (conjugate pair, both
    # quadratures), the DC and Nyquist bins keep only their real part
    weight = np.full(freqs.size, 4.0)
    weight[0] = 1.0
    if n % 2 == 0:
        weight[-1] = 1.0
    return x * n / np.sqrt(np.sum(weight * amp**2))
