"""Synthetic sea / land / sea-land clutter spectra and dataset files.

Each spectrum is a sum of Gaussian Doppler peaks on a uniform noise floor,
min-max normalized to [-1, 1]:

* sea: a Bragg pair symmetric about zero Doppler (bins ``256 +/- offset``);
* land: one peak near zero Doppler;
* sea-land: both patterns superposed (three peaks).

Every sample draws from its own RNG stream keyed by ``(seed, class, index)``,
so a dataset is a pure function of its parameters and seed.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path

import numpy as np

SIGNAL_LENGTH = 512
UNLABELED = -1
TRAIN, TEST = 0, 1

MAGIC = b"SLCD"
VERSION = 1
_HEADER = struct.Struct("<4sIII")


class ClutterClass(IntEnum):
    SEA = 0
    LAND = 1
    SEA_LAND = 2


NUM_CLASSES = len(ClutterClass)


class GeometryError(ValueError):
    pass


class DegenerateRangeError(ValueError):
    pass


class DatasetFormatError(ValueError):
    pass


@dataclass(frozen=True)
class SpectrumParams:
    """Shape of the synthetic Doppler spectra.

    The defaults spread peak positions widely (a sea-land land peak and its
    Bragg pair stay at least 25 bins apart) and add enough noise that ten
    labels per class do not pin the classes down. With only a few bins of
    jitter the three classes are separated perfectly by 1-NN on 30 labels.
    """

    length: int = SIGNAL_LENGTH
    bragg_offset: float = 165.0
    peak_width: float = 6.0
    amp_jitter: float = 0.5
    doppler_jitter: float = 70.0
    noise_floor: float = 0.3

    def validate(self) -> None:
        if self.length < 8 or self.bragg_offset <= 0 or self.peak_width <= 0:
            raise ValueError(f"length, bragg_offset and peak_width must be positive: {self}")
        if not 0 <= self.amp_jitter <= 1:
            raise ValueError(f"amp_jitter must lie in [0, 1], got {self.amp_jitter}")
        if self.doppler_jitter < 0 or self.noise_floor < 0:
            raise ValueError("doppler_jitter and noise_floor must be nonnegative")
        if self.bragg_offset + self.doppler_jitter + 3 * self.peak_width >= self.length / 2:
            raise GeometryError(
                f"peaks leave the band: offset {self.bragg_offset} + jitter {self.doppler_jitter}"
                f" + 3*width {3 * self.peak_width} >= {self.length / 2}"
            )


def normalize(signal) -> np.ndarray:
    """Affine map of the signal onto [-1, 1]; min -> -1 and max -> +1 exactly."""
    x = np.asarray(signal, dtype=np.float64)
    lo, hi = x.min(), x.max()
    if not hi > lo:
        raise DegenerateRangeError("cannot normalize a constant signal")
    return (x - lo) / (hi - lo) * 2.0 - 1.0


def _gauss(bins: np.ndarray, center: float, width: float) -> np.ndarray:
    return np.exp(-0.5 * ((bins - center) / width) ** 2)


def synth_spectrum(cls: ClutterClass | int, params: SpectrumParams, rng: np.random.Generator) -> np.ndarray:
    """One normalized spectrum of the given class (float64, length ``params.length``)."""
    params.validate()
    cls = ClutterClass(int(cls))
    bins = np.arange(params.length, dtype=np.float64)
    center = params.length // 2
    aj, dj = params.amp_jitter, params.doppler_jitter
    x = np.zeros(params.length)

    def amp() -> float:
        return 1.0 + aj * rng.uniform(-1.0, 1.0)

    if cls in (ClutterClass.SEA, ClutterClass.SEA_LAND):
        offset = params.bragg_offset + dj * rng.uniform(-1.0, 1.0)
        x += amp() * _gauss(bins, center - offset, params.peak_width)
        x += amp() * _gauss(bins, center + offset, params.peak_width)
    if cls in (ClutterClass.LAND, ClutterClass.SEA_LAND):
        shift = dj * rng.uniform(-1.0, 1.0)
        x += amp() * _gauss(bins, center + shift, params.peak_width)
    if params.noise_floor > 0:
        x += params.noise_floor * rng.uniform(0.0, 1.0, params.length)
    return normalize(x)


def sample_rng(seed: int, cls: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(int(cls), int(index))))


@dataclass
class Dataset:
    signals: np.ndarray  # [N, 512] float32
    labels: np.ndarray  # [N] int8, UNLABELED = -1
    roles: np.ndarray  # [N] uint8, TRAIN = 0 / TEST = 1

    def __post_init__(self):
        self.signals = np.asarray(self.signals, dtype=np.float32).reshape(-1, SIGNAL_LENGTH)
        self.labels = np.asarray(self.labels, dtype=np.int8)
        self.roles = np.asarray(self.roles, dtype=np.uint8)
        if not (len(self.signals) == len(self.labels) == len(self.roles)):
            raise ValueError("signals, labels and roles differ in length")

    def __len__(self) -> int:
        return len(self.labels)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            np.array_equal(self.labels, other.labels)
            and np.array_equal(self.roles, other.roles)
            and self.signals.tobytes() == other.signals.tobytes()
        )

    def subset(self, mask) -> "Dataset":
        return Dataset(self.signals[mask], self.labels[mask], self.roles[mask])

    @property
    def train(self) -> "Dataset":
        return self.subset(self.roles == TRAIN)

    @property
    def test(self) -> "Dataset":
        return self.subset(self.roles == TEST)

    def labeled_train(self) -> "Dataset":
        return self.subset((self.roles == TRAIN) & (self.labels != UNLABELED))

    def class_counts(self, role: int | None = None) -> dict[int, int]:
        mask = np.ones(len(self), dtype=bool) if role is None else self.roles == role
        labels = self.labels[mask]
        return {int(c): int(np.sum(labels == c)) for c in ClutterClass}


def make_dataset(
    per_class: int = 1000,
    train_frac: float = 0.7,
    params: SpectrumParams | None = None,
    seed: int = 0,
) -> Dataset:
    """Class-balanced, fully labeled dataset; the first ``floor(train_frac * per_class)``
    samples of each class are training samples."""
    params = params or SpectrumParams()
    params.validate()
    if per_class < 10:
        raise ValueError("per_class must be at least 10")
    if not 0.0 < train_frac < 1.0:
        raise ValueError(f"train_frac must lie in (0, 1), got {train_frac}")
    n_train = int(np.floor(train_frac * per_class))
    signals, labels, roles = [], [], []
    for cls in ClutterClass:
        for i in range(per_class):
            signals.append(synth_spectrum(cls, params, sample_rng(seed, cls, i)))
            labels.append(int(cls))
            roles.append(TRAIN if i < n_train else TEST)
    return Dataset(np.array(signals, dtype=np.float32), labels, roles)


def split_semisupervised(dataset: Dataset, n_lab: int, seed: int = 0) -> Dataset:
    """Keep labels on ``n_lab / K`` random training samples per class; mark the rest unlabeled."""
    if n_lab <= 0 or n_lab % NUM_CLASSES:
        raise ValueError(f"n_lab must be a positive multiple of {NUM_CLASSES}, got {n_lab}")
    per = n_lab // NUM_CLASSES
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(n_lab,)))
    labels = dataset.labels.copy()
    for cls in ClutterClass:
        idx = np.flatnonzero((dataset.roles == TRAIN) & (dataset.labels == cls))
        if per > len(idx):
            raise ValueError(f"n_lab/{NUM_CLASSES} = {per} exceeds the {len(idx)} training samples of {cls.name}")
        keep = rng.permutation(idx)[:per]
        drop = np.setdiff1d(idx, keep)
        labels[drop] = UNLABELED
    return Dataset(dataset.signals.copy(), labels, dataset.roles.copy())


_RECORD = np.dtype([("label", "i1"), ("role", "u1"), ("signal", "<f4", (SIGNAL_LENGTH,))])


def write_dataset(dataset: Dataset, path) -> None:
    rec = np.empty(len(dataset), dtype=_RECORD)
    rec["label"] = dataset.labels
    rec["role"] = dataset.roles
    rec["signal"] = dataset.signals
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, len(dataset), SIGNAL_LENGTH))
        fh.write(rec.tobytes())


def read_dataset(path) -> Dataset:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise DatasetFormatError("truncated header")
    magic, version, count, length = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise DatasetFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise DatasetFormatError(f"unsupported version {version}")
    if length != SIGNAL_LENGTH:
        raise DatasetFormatError(f"signal length {length} != {SIGNAL_LENGTH}")
    body = raw[_HEADER.size :]
    if len(body) != count * _RECORD.itemsize:
        raise DatasetFormatError(f"expected {count} records ({count * _RECORD.itemsize} bytes), got {len(body)} bytes")
    rec = np.frombuffer(body, dtype=_RECORD, count=count)
    if np.any((rec["label"] < UNLABELED) | (rec["label"] >= NUM_CLASSES)) or np.any(rec["role"] > TEST):
        raise DatasetFormatError("label or role out of range")
    return Dataset(rec["signal"].copy(), rec["label"].copy(), rec["role"].copy())


def count_peaks(signal, prominence_frac: float = 0.5) -> int:
    """Number of local maxima whose prominence exceeds ``prominence_frac`` of the signal range."""
    from scipy.signal import find_peaks

    x = np.asarray(signal, dtype=np.float64)
    peaks, _ = find_peaks(x, prominence=prominence_frac * (x.max() - x.min()))
    return len(peaks)
