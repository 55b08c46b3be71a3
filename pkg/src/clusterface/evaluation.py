"""Clustering (k-means, DBSCAN), partition metrics (NMI, BCubed) and pair verification.

DBSCAN noise (label -1) is treated as singleton clusters by the metrics.
"""

import csv
import json
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    InsufficientDataError,
    InvalidKError,
    InvalidParamsError,
    LengthMismatchError,
    NoNegativePairsError,
    NoPositivePairsError,
)
from .encoder import forward

NOISE = -1


@dataclass
class ClusteringResult:
    assignment: np.ndarray
    num_clusters: int
    inertia_history: list = field(default_factory=list)
    centers: np.ndarray = None


def _sq_dists(x, c):
    d = (x * x).sum(1)[:, None] - 2.0 * x @ c.T + (c * c).sum(1)[None, :]
    return np.maximum(d, 0.0)


def _kmeans_pp(x, k, rng):
    n = len(x)
    idx = [int(rng.integers(n))]
    d2 = _sq_dists(x, x[idx])[:, 0]
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            nxt = int(rng.integers(n))
        else:
            nxt = int(rng.choice(n, p=d2 / total))
        idx.append(nxt)
        d2 = np.minimum(d2, _sq_dists(x, x[nxt:nxt + 1])[:, 0])
    return x[idx].copy()


def kmeans(features, k, max_iters=100, rng=None):
    """Lloyd's algorithm with k-means++ seeding.

    Stops at an assignment fixpoint or after ``max_iters``. The inertia after
    every update step is kept in ``inertia_history``.
    """
    x = np.asarray(features, dtype=np.float64)
    n = len(x)
    if not 1 <= k <= n:
        raise InvalidKError(f"k={k} must lie in [1, {n}]")
    if rng is None:
        rng = np.random.default_rng(0)
    centers = _kmeans_pp(x, k, rng)
    assign = _sq_dists(x, centers).argmin(1)
    history = []
    for _ in range(max_iters):
        for j in range(k):
            members = assign == j
            if members.any():
                centers[j] = x[members].mean(0)
        d = _sq_dists(x, centers)
        history.append(float(d[np.arange(n), assign].sum()))
        new = d.argmin(1)
        # keep the current cluster on exact ties so the loop cannot cycle
        keep = d[np.arange(n), assign] <= d[np.arange(n), new]
        new = np.where(keep, assign, new)
        if np.array_equal(new, assign):
            break
        assign = new
    _, contiguous = np.unique(assign, return_inverse=True)
    return ClusteringResult(contiguous, int(contiguous.max()) + 1, history, centers)


def dbscan(features, eps, min_pts):
    """Density clustering; clusters grow from cores in ascending sample index."""
    if eps <= 0 or min_pts < 1:
        raise InvalidParamsError("need eps > 0 and min_pts >= 1")
    x = np.asarray(features, dtype=np.float64)
    n = len(x)
    neigh = _sq_dists(x, x) <= eps * eps
    core = neigh.sum(1) >= min_pts
    assign = np.full(n, NOISE, dtype=np.int64)
    cid = 0
    for i in range(n):
        if assign[i] != NOISE or not core[i]:
            continue
        assign[i] = cid
        frontier = deque([i])
        while frontier:
            p = frontier.popleft()
            if not core[p]:
                continue
            for q in np.flatnonzero(neigh[p]):
                if assign[q] == NOISE:
                    assign[q] = cid
                    frontier.append(q)
        cid += 1
    return ClusteringResult(assign, cid)


def _labels(pred):
    a = pred.assignment if isinstance(pred, ClusteringResult) else pred
    a = np.asarray(a, dtype=np.int64).copy()
    noise = a == NOISE
    if noise.any():
        a[noise] = a.max(initial=0) + 1 + np.arange(noise.sum())
    return a


def contingency(pred, truth):
    p, t = _labels(pred), np.asarray(truth, dtype=np.int64)
    if len(p) != len(t):
        raise LengthMismatchError("pred and truth differ in length")
    _, pi = np.unique(p, return_inverse=True)
    _, ti = np.unique(t, return_inverse=True)
    table = np.zeros((pi.max(initial=-1) + 1, ti.max(initial=-1) + 1))
    np.add.at(table, (pi, ti), 1.0)
    return table


def _entropy(counts, n):
    q = counts[counts > 0] / n
    return float(-(q * np.log(q)).sum())


def nmi(pred, truth):
    """Mutual information normalized by the geometric mean of the two entropies."""
    table = contingency(pred, truth)
    n = table.sum()
    rows, cols = table.sum(1), table.sum(0)
    hp, ht = _entropy(rows, n), _entropy(cols, n)
    if hp == 0.0 or ht == 0.0:
        return 1.0 if hp == ht else 0.0
    nz = table > 0
    outer = np.outer(rows, cols)
    mi = float((table[nz] / n * np.log(table[nz] * n / outer[nz])).sum())
    return float(min(max(mi / np.sqrt(hp * ht), 0.0), 1.0))


def bcubed_f(pred, truth):
    """Item-averaged BCubed precision and recall and their harmonic mean."""
    table = contingency(pred, truth)
    n = table.sum()
    sq = table * table
    precision = float((sq / table.sum(1, keepdims=True)).sum() / n)
    recall = float((sq / table.sum(0, keepdims=True)).sum() / n)
    f = 2 * precision * recall / (precision + recall)
    return {"precision": precision, "recall": recall, "f": f}


def clustering_report(method, params, pred, truth):
    b = bcubed_f(pred, truth)
    return {"method": method, **params, "nmi": nmi(pred, truth),
            "bcubed_p": b["precision"], "bcubed_r": b["recall"], "bcubed_f": b["f"]}


def make_pairs(labels, num_pos, num_neg, rng):
    """Distinct same-class and cross-class index pairs as an ``(n, 3)`` array ``(i, j, same)``.

    Same-class pairs are uniform over all same-class pairs; cross-class pairs
    are uniform over all cross-class pairs.
    """
    labels = np.asarray(labels, dtype=np.int64)
    classes, counts = np.unique(labels, return_counts=True)
    members = {c: np.flatnonzero(labels == c) for c in classes}
    pair_counts = counts * (counts - 1) // 2
    total_pos = int(pair_counts.sum())
    n = len(labels)
    total_neg = n * (n - 1) // 2 - total_pos
    if num_pos > 0 and total_pos < num_pos:
        raise InsufficientDataError(f"only {total_pos} same-class pairs available")
    if num_neg > 0 and (len(classes) < 2 or total_neg < num_neg):
        raise InsufficientDataError(f"only {total_neg} cross-class pairs available")
    out, seen = [], set()
    if num_pos > 0:
        probs = pair_counts / pair_counts.sum()
        while len(seen) < num_pos:
            c = classes[rng.choice(len(classes), p=probs)]
            i, j = rng.choice(members[c], size=2, replace=False)
            key = (min(i, j), max(i, j))
            if key not in seen:
                seen.add(key)
                out.append((key[0], key[1], 1))
    neg_seen = set()
    while len(neg_seen) < num_neg:
        i, j = rng.integers(n, size=2)
        if labels[i] == labels[j]:
            continue
        key = (min(i, j), max(i, j))
        if key not in neg_seen:
            neg_seen.add(key)
            out.append((key[0], key[1], 0))
    return np.array(out, dtype=np.int64).reshape(-1, 3)


@dataclass
class VerificationReport:
    bin_edges: np.ndarray
    pos_counts: np.ndarray
    neg_counts: np.ndarray
    mu_pos: float
    mu_neg: float
    margin: float
    accuracy: float
    best_threshold: float
    tar: dict

    def to_dict(self):
        return {
            "bin_edges": self.bin_edges.tolist(),
            "pos_counts": self.pos_counts.tolist(),
            "neg_counts": self.neg_counts.tolist(),
            "mu_pos": self.mu_pos,
            "mu_neg": self.mu_neg,
            "margin": self.margin,
            "accuracy": self.accuracy,
            "best_threshold": self.best_threshold,
            "tar_at_far": {repr(k): v for k, v in self.tar.items()},
        }


def _best_accuracy(scores, same):
    vals, inv = np.unique(scores, return_inverse=True)
    pos = np.bincount(inv, weights=same, minlength=len(vals))[::-1]
    neg = np.bincount(inv, weights=1 - same, minlength=len(vals))[::-1]
    n_neg = neg.sum()
    # accept every score >= vals[::-1][j]
    acc = (np.cumsum(pos) + n_neg - np.cumsum(neg)) / len(scores)
    j = int(acc.argmax())
    reject_all = n_neg / len(scores)
    if reject_all > acc[j]:
        return float(reject_all), float("inf")
    return float(acc[j]), float(vals[::-1][j])


def verification_report(embeddings, pairs, fars=(1e-4, 1e-3, 1e-2), bin_width=0.02):
    """Cosine-similarity statistics for ``(i, j, same)`` pairs of unit embeddings."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 3)
    same = pairs[:, 2].astype(np.float64)
    if not (same == 1).any():
        raise NoPositivePairsError("pair list has no positive pairs")
    if not (same == 0).any():
        raise NoNegativePairsError("pair list has no negative pairs")
    e = np.asarray(embeddings, dtype=np.float64)
    scores = np.clip((e[pairs[:, 0]] * e[pairs[:, 1]]).sum(1), -1.0, 1.0)
    pos, neg = scores[same == 1], scores[same == 0]
    n_bins = int(round(2.0 / bin_width))
    edges = np.linspace(-1.0, 1.0, n_bins + 1)
    pos_counts, _ = np.histogram(pos, bins=edges)
    neg_counts, _ = np.histogram(neg, bins=edges)
    mu_pos, mu_neg = float(pos.mean()), float(neg.mean())
    tar = {}
    for far in fars:
        thr = np.quantile(neg, 1.0 - far)
        tar[far] = float((pos > thr).mean())
    acc, thr = _best_accuracy(scores, same)
    return VerificationReport(edges, pos_counts, neg_counts, mu_pos, mu_neg, mu_pos - mu_neg,
                              acc, thr, tar)


def verification_eval(model, inputs, pairs, **kwargs):
    """Embed ``inputs`` with the encoder, then :func:`verification_report`."""
    emb, _ = forward(model, inputs)
    return verification_report(emb, pairs, **kwargs)


def write_verification_json(report, path, extra=None):
    payload = report.to_dict()
    if extra:
        payload.update(extra)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)


def write_histogram_csv(report, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_left", "bin_right", "pos_count", "neg_count"])
        for lo, hi, p, q in zip(report.bin_edges[:-1], report.bin_edges[1:],
                                report.pos_counts, report.neg_counts):
            w.writerow([f"{lo:.4f}", f"{hi:.4f}", int(p), int(q)])
