"""Synthetic labeled datasets with per-class dispersion, plus dataset file IO.

Binary layout (little-endian)::

    b"CMLB"    magic
    u8         version (1)
    u32        N (samples)
    u32        d_in
    u32        K (classes)
    N records  f64[d_in] inputs followed by a u32 label

Labels are 0-based.
"""

import csv
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ClassTooSmallError, FormatError, InvalidSpecError
from .numeric import l2_normalize, make_rng

DATASET_MAGIC = b"CMLB"
DATASET_VERSION = 1
_HEADER = struct.Struct("<4sBIII")


@dataclass
class SynthSpec:
    num_classes: int = 50
    samples_per_class: int = 200
    input_dim: int = 32
    sigma_range: tuple = (0.1, 0.8)
    sigmas: list = None  # explicit per-class spreads; overrides sigma_range
    seed: int = 0

    def class_sigmas(self):
        if self.sigmas is not None:
            return np.asarray(self.sigmas, dtype=np.float64)
        lo, hi = self.sigma_range
        return np.linspace(lo, hi, self.num_classes)

    def validate(self):
        if self.num_classes < 2:
            raise InvalidSpecError("need at least 2 classes")
        if self.samples_per_class < 2:
            raise InvalidSpecError("need at least 2 samples per class")
        if self.input_dim < 1:
            raise InvalidSpecError("input_dim must be positive")
        sig = self.class_sigmas()
        if len(sig) != self.num_classes:
            raise InvalidSpecError("one sigma per class required")
        if np.any(sig <= 0) or not np.all(np.isfinite(sig)):
            raise InvalidSpecError("sigmas must be finite and > 0")

    @classmethod
    def from_dict(cls, d):
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        if "sigma_range" in known:
            known["sigma_range"] = tuple(known["sigma_range"])
        return cls(**known)


@dataclass(eq=False)
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __len__(self):
        return len(self.labels)

    def subset(self, idx):
        return Dataset(self.inputs[idx], self.labels[idx], self.num_classes)

    def equals(self, other):
        return (self.num_classes == other.num_classes
                and np.array_equal(self.labels, other.labels)
                and self.inputs.shape == other.inputs.shape
                and self.inputs.tobytes() == other.inputs.tobytes())


def generate(spec):
    """Gaussian blobs around random unit mean directions, one sigma per class.

    Samples are grouped by class (class 0 first).
    """
    spec.validate()
    rng = make_rng(spec.seed)
    sig = spec.class_sigmas()
    means = l2_normalize(rng.standard_normal((spec.num_classes, spec.input_dim)))
    noise = rng.standard_normal((spec.num_classes, spec.samples_per_class, spec.input_dim))
    x = means[:, None, :] + sig[:, None, None] * noise
    labels = np.repeat(np.arange(spec.num_classes), spec.samples_per_class)
    return Dataset(x.reshape(-1, spec.input_dim), labels, spec.num_classes)


def write_dataset(dataset, path):
    n, d = dataset.inputs.shape
    rec = np.zeros(n, dtype=[("x", "<f8", (d,)), ("label", "<u4")])
    rec["x"] = dataset.inputs
    rec["label"] = dataset.labels
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(DATASET_MAGIC, DATASET_VERSION, n, d, dataset.num_classes))
        fh.write(rec.tobytes())


def read_dataset(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _HEADER.size:
        raise FormatError("truncated dataset header")
    magic, version, n, d, k = _HEADER.unpack_from(data)
    if magic != DATASET_MAGIC:
        raise FormatError("bad dataset magic")
    if version != DATASET_VERSION:
        raise FormatError(f"unsupported dataset version {version}")
    if d == 0:
        raise FormatError("dataset has zero input dims")
    dtype = np.dtype([("x", "<f8", (d,)), ("label", "<u4")])
    if len(data) != _HEADER.size + n * dtype.itemsize:
        raise FormatError("dataset payload does not match header")
    rec = np.frombuffer(data, dtype=dtype, offset=_HEADER.size)
    labels = rec["label"].astype(np.int64)
    if n and labels.max() >= k:
        raise FormatError("label out of range for declared class count")
    return Dataset(rec["x"].astype(np.float64), labels, int(k))


def write_csv(dataset, path):
    d = dataset.inputs.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label"] + [f"x{i + 1}" for i in range(d)])
        for y, row in zip(dataset.labels, dataset.inputs):
            w.writerow([int(y)] + [repr(float(v)) for v in row])


def read_csv(path, num_classes=None):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "label":
        raise FormatError("CSV must start with a 'label,x1,...' header")
    body = rows[1:]
    labels = np.array([int(r[0]) for r in body], dtype=np.int64)
    inputs = np.array([[float(v) for v in r[1:]] for r in body], dtype=np.float64)
    k = num_classes if num_classes is not None else int(labels.max()) + 1
    return Dataset(inputs.reshape(len(body), len(rows[0]) - 1), labels, k)


def split(dataset, train_frac, rng):
    """Stratified split; every class keeps at least one sample on each side."""
    if not 0.0 < train_frac < 1.0:
        raise ValueError("train_frac must lie in (0, 1)")
    train_idx, eval_idx = [], []
    for k in range(dataset.num_classes):
        idx = np.flatnonzero(dataset.labels == k)
        if len(idx) == 0:
            continue
        if len(idx) < 2:
            raise ClassTooSmallError(f"class {k} has fewer than 2 samples")
        n_train = int(np.clip(round(train_frac * len(idx)), 1, len(idx) - 1))
        perm = rng.permutation(idx)
        train_idx.append(perm[:n_train])
        eval_idx.append(perm[n_train:])
    tr = np.sort(np.concatenate(train_idx))
    ev = np.sort(np.concatenate(eval_idx))
    return dataset.subset(tr), dataset.subset(ev)
