"""Feature queue, cluster-center bank, per-class concentration and class sampling.

Class ids are 0-based integers ``0..K-1``. Features entering the queue must be
unit norm; the bank stores raw (unnormalized) means, and
:func:`sample_classes` hands out L2-normalized copies for the contrastive
losses.

Concentration of class k, with its queue features Q_k and bank center C_k::

    phi_k = sum_{f in Q_k} ||f - C_k||_2 / (|Q_k| * ln(|Q_k| + alpha))
"""

import json
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import (
    EmptyClassError,
    InvalidParamsError,
    NonUnitFeatureError,
    RequiredClassUninitializedError,
    UninitializedCenterError,
)
from .numeric import l2_normalize

UNIT_TOL = 1e-9


class LabeledFeature(NamedTuple):
    feature: np.ndarray
    label: int


def _check_unit(features):
    if features.size and np.any(np.abs(np.linalg.norm(features, axis=1) - 1.0) > UNIT_TOL):
        raise NonUnitFeatureError("queue entries must be unit norm")


class FeatureQueue:
    """FIFO of labeled unit features; the oldest entries are evicted first."""

    def __init__(self, capacity=8192, dim=None):
        if capacity < 1:
            raise InvalidParamsError("queue capacity must be >= 1")
        self.capacity = int(capacity)
        self.dim = dim
        self.features = np.zeros((0, dim or 0))
        self.labels = np.zeros(0, dtype=np.int64)

    def __len__(self):
        return len(self.labels)

    def entries(self):
        return [LabeledFeature(f.copy(), int(y)) for f, y in zip(self.features, self.labels)]

    def class_ids(self):
        return np.unique(self.labels)

    def class_features(self, k):
        return self.features[self.labels == k]


def enqueue(queue, features, labels=None):
    """Append a batch in order, evicting the oldest entries beyond capacity.

    ``features`` is an ``(n, d)`` array with ``labels`` of length n, or a
    sequence of :class:`LabeledFeature` with ``labels`` omitted.
    """
    if labels is None:
        items = list(features)
        if not items:
            return queue
        labels = [it.label for it in items]
        features = [it.feature for it in items]
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if features.size == 0:
        return queue
    features = features.reshape(len(labels), -1)
    _check_unit(features)
    if queue.dim is None or len(queue) == 0:
        queue.dim = features.shape[1]
        queue.features = queue.features.reshape(0, queue.dim)
    feats = np.concatenate([queue.features, features])[-queue.capacity:]
    labs = np.concatenate([queue.labels, labels])[-queue.capacity:]
    queue.features, queue.labels = feats, labs
    return queue


def queue_class_center(queue, k):
    """Mean of the class-k features currently in the queue (not renormalized)."""
    feats = queue.class_features(k)
    if len(feats) == 0:
        raise EmptyClassError(f"class {k} has no features in the queue")
    return feats.mean(axis=0)


def queue_class_centers(queue, num_classes):
    """All class means at once: ``(centers[K, d], counts[K])``; absent classes get zeros."""
    counts = np.bincount(queue.labels, minlength=num_classes).astype(np.float64)
    sums = np.zeros((num_classes, queue.features.shape[1]))
    np.add.at(sums, queue.labels, queue.features)
    centers = np.divide(sums, counts[:, None], out=np.zeros_like(sums), where=counts[:, None] > 0)
    return centers, counts


class ClusterCenterBank:
    """Per-class EMA of queue means: C_k <- m_c C_k + (1 - m_c) C_k^q."""

    def __init__(self, num_classes, dim, momentum=0.9):
        if not 0.0 <= momentum <= 1.0:
            raise InvalidParamsError("bank momentum must lie in [0, 1]")
        self.num_classes = int(num_classes)
        self.momentum = float(momentum)
        self.centers = np.zeros((num_classes, dim))
        self.initialized = np.zeros(num_classes, dtype=bool)

    def center(self, k):
        if not self.initialized[k]:
            raise UninitializedCenterError(f"class {k} has no bank center yet")
        return self.centers[k]

    def initialized_ids(self):
        return np.flatnonzero(self.initialized)


def bank_update(bank, k, center_q):
    """Update one or many classes; ``k`` may be an int or an index array."""
    ids = np.atleast_1d(np.asarray(k, dtype=np.int64))
    cq = np.asarray(center_q, dtype=np.float64).reshape(len(ids), -1)
    fresh = ~bank.initialized[ids]
    old = bank.centers[ids]
    # First observation copies the queue mean instead of blending with zeros.
    new = np.where(fresh[:, None], cq, bank.momentum * old + (1.0 - bank.momentum) * cq)
    bank.centers[ids] = new
    bank.initialized[ids] = True
    return bank


def class_concentration(features, center, alpha=10.0):
    """phi for one class given its features (rows) and center."""
    feats = np.asarray(features, dtype=np.float64)
    n = len(feats)
    if n == 0:
        raise EmptyClassError("class has no features")
    if n + alpha <= 1.0:
        raise InvalidParamsError("|Q_k| + alpha must exceed 1")
    return float(np.linalg.norm(feats - center, axis=1).sum() / (n * np.log(n + alpha)))


def concentration(queue, bank, k, alpha=10.0):
    feats = queue.class_features(k)
    if len(feats) == 0:
        raise EmptyClassError(f"class {k} has no features in the queue")
    return class_concentration(feats, bank.center(k), alpha)


@dataclass
class ConcentrationTable:
    """phi per class; NaN marks classes without a valid value."""

    phi: np.ndarray
    alpha: float = 10.0
    skipped: list = field(default_factory=list)

    @property
    def valid(self):
        return ~np.isnan(self.phi)

    @property
    def phi_min(self):
        v = self.phi[self.valid]
        return float(v.min()) if v.size else float("nan")

    @property
    def phi_max(self):
        v = self.phi[self.valid]
        return float(v.max()) if v.size else float("nan")

    def __len__(self):
        return int(self.valid.sum())

    def get(self, k, default=None):
        v = self.phi[k]
        return default if np.isnan(v) else float(v)

    @classmethod
    def empty(cls, num_classes, alpha=10.0):
        return cls(np.full(num_classes, np.nan), alpha)

    @classmethod
    def from_dict(cls, phi, num_classes, alpha=10.0):
        table = cls.empty(num_classes, alpha)
        for k, v in phi.items():
            table.phi[int(k)] = v
        return table


def refresh_concentrations(queue, bank, alpha=10.0):
    """phi for every queue-resident class with an initialized center.

    Classes present in the queue but without a bank center are listed in
    ``table.skipped``.
    """
    table = ConcentrationTable.empty(bank.num_classes, alpha)
    if len(queue) == 0:
        return table
    counts = np.bincount(queue.labels, minlength=bank.num_classes)
    present = counts > 0
    table.skipped = [int(k) for k in np.flatnonzero(present & ~bank.initialized)]
    use = present & bank.initialized
    dist = np.linalg.norm(queue.features - bank.centers[queue.labels], axis=1)
    sums = np.bincount(queue.labels, weights=dist, minlength=bank.num_classes)
    n = counts[use].astype(np.float64)
    table.phi[use] = sums[use] / (n * np.log(n + alpha))
    return table


@dataclass
class ClassSample:
    center_ids: np.ndarray
    centers: np.ndarray  # unit-norm copies, one row per id
    temps: np.ndarray

    def __len__(self):
        return len(self.center_ids)


def sample_classes(bank, table, required, M, rng, min_temp=0.0):
    """Pick M classes: all of ``required`` plus a uniform draw from the rest.

    Candidates are classes with both a bank center and a valid phi. M is
    clipped to the number of candidates; ids come back sorted ascending.
    Temperatures are ``max(phi, min_temp)``.
    """
    required = np.unique(np.asarray(required, dtype=np.int64))
    eligible = bank.initialized & table.valid
    bad = required[~eligible[required]] if required.size else required
    if bad.size:
        raise RequiredClassUninitializedError(f"required classes without center/phi: {bad.tolist()}")
    candidates = np.flatnonzero(eligible)
    M = min(int(M), len(candidates))
    if M < len(required):
        raise InvalidParamsError(f"M={M} is smaller than the {len(required)} required classes")
    others = np.setdiff1d(candidates, required)
    n_extra = M - len(required)
    if n_extra == len(others):
        extra = others
    elif n_extra > 0:
        extra = rng.choice(others, size=n_extra, replace=False)
    else:
        extra = others[:0]
    ids = np.sort(np.concatenate([required, extra]))
    centers = l2_normalize(bank.centers[ids]) if len(ids) else np.zeros((0, bank.centers.shape[1]))
    temps = np.maximum(table.phi[ids], min_temp)
    return ClassSample(ids, centers, temps)


def state_snapshot(table, bank, epoch):
    """JSON-ready dict of the concentration table and bank center norms."""
    valid = table.valid
    ids = np.flatnonzero(bank.initialized)
    return {
        "epoch": int(epoch),
        "alpha": table.alpha,
        "phi": {str(int(k)): float(table.phi[k]) for k in np.flatnonzero(valid)},
        "phi_min": table.phi_min if valid.any() else None,
        "phi_max": table.phi_max if valid.any() else None,
        "bank_norms": {str(int(k)): float(np.linalg.norm(bank.centers[k])) for k in ids},
    }


def write_state_dump(snapshots, path):
    with open(path, "w") as fh:
        json.dump(snapshots, fh, indent=1, sort_keys=True)
