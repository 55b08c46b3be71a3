"""Loss functions with analytic gradients.

Shapes: features ``F`` are ``(B, d)`` unit rows, labels are 0-based ints,
classifier weights ``W`` are ``(d, K)`` with unit columns, sampled centers
are ``(M, d)`` unit rows. Every loss returns a :class:`LossBundle`.

Gradient flow: bank centers and their temperatures are constants. The
cluster-aligning loss sends gradients to ``W`` and its temperature only.
Temperature gradients are reported with respect to ``log(tau)``, the
quantity the optimizer updates.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateTemperatureError,
    InvalidLabelError,
    LengthMismatchError,
    MissingClassMeanError,
    MissingPositiveCenterError,
    NonDeterministicLossError,
    OutOfRangeError,
)
from .numeric import l2_normalize, log_sum_exp, stable_softmax

EPS_TEMP = 1e-8
_SIN_FLOOR = 1e-12


@dataclass
class Classifier:
    """Learnable class centers (columns of ``W``) with ArcFace scale and margin."""

    W: np.ndarray
    s: float = 64.0
    m: float = 0.5

    @classmethod
    def init(cls, dim, num_classes, rng, s=64.0, m=0.5):
        W = l2_normalize(rng.standard_normal((num_classes, dim))).T.copy()
        return cls(W, s, m)

    @property
    def num_classes(self):
        return self.W.shape[1]

    def renormalize(self):
        self.W /= np.linalg.norm(self.W, axis=0, keepdims=True)


@dataclass
class TempParam:
    """Positive temperature optimized in log space."""

    tau: float = 0.07
    learnable: bool = True

    @property
    def log_tau(self):
        return float(np.log(self.tau))

    @log_tau.setter
    def log_tau(self, value):
        self.tau = float(np.exp(value))


@dataclass
class LossBundle:
    value: float
    grad_features: np.ndarray = None
    grad_W: np.ndarray = None
    grad_tau: float = None  # d value / d log(tau) of the cluster-aligning temperature
    grad_tau0: float = None  # d value / d log(tau0) of the fixed contrastive temperature
    extra: dict = field(default_factory=dict)
    components: dict = field(default_factory=dict)


def _check_labels(labels, num_classes):
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise InvalidLabelError(f"labels must lie in [0, {num_classes})")
    return labels


def margin_scale(phi_y, phi_min, phi_max, tol=1e-9):
    """Linear map of a concentration onto [0, 1]; 1 when the range is degenerate."""
    if phi_max - phi_min < 1e-12:
        return 1.0
    if phi_y < phi_min - tol or phi_y > phi_max + tol:
        raise OutOfRangeError(f"phi={phi_y} outside [{phi_min}, {phi_max}]")
    return float(min(max((phi_y - phi_min) / (phi_max - phi_min), 0.0), 1.0))


def margin_scales(table, labels):
    """Per-sample margin scale; classes without a valid phi get 1 (full margin)."""
    labels = np.asarray(labels, dtype=np.int64)
    out = np.ones(len(labels))
    if table is None or len(table) == 0:
        return out
    lo, hi = table.phi_min, table.phi_max
    if hi - lo < 1e-12:
        return out
    phi = table.phi[labels]
    have = ~np.isnan(phi)
    out[have] = np.clip((phi[have] - lo) / (hi - lo), 0.0, 1.0)
    return out


def _margin_softmax(features, labels, classifier, margins):
    F = np.asarray(features, dtype=np.float64)
    W = classifier.W
    labels = _check_labels(labels, W.shape[1])
    B = len(labels)
    rows = np.arange(B)
    cos = np.clip(F @ W, -1.0, 1.0)
    ct = cos[rows, labels]
    sin = np.sqrt(np.maximum(1.0 - ct * ct, 0.0))
    cm, sm = np.cos(margins), np.sin(margins)
    inside = ct > -cm  # theta + mu < pi
    target = np.where(inside, ct * cm - sin * sm, ct - margins * sm)
    dtarget = np.where(inside, cm + sm * ct / np.maximum(sin, _SIN_FLOOR), 1.0)

    logits = classifier.s * cos
    logits[rows, labels] = classifier.s * target
    per_sample = log_sum_exp(logits, axis=1) - logits[rows, labels]

    g = stable_softmax(logits, axis=1)
    g[rows, labels] -= 1.0
    g *= classifier.s / B
    g[rows, labels] *= dtarget
    return LossBundle(
        value=float(per_sample.mean()),
        grad_features=g @ W.T,
        grad_W=F.T @ g,
        extra={"per_sample": per_sample},
    )


def arcface(features, labels, classifier):
    """Additive angular margin softmax with the classifier's fixed margin."""
    margins = np.full(len(labels), float(classifier.m))
    return _margin_softmax(features, labels, classifier, margins)


def cg_arcface(features, labels, classifier, table=None, scales=None):
    """Margin softmax whose per-class margin is ``margin_scale(phi_y) * m``.

    ``scales`` overrides the table lookup (the trainer uses it for warm-up).
    Scales are constants: no gradient flows through phi.
    """
    if scales is None:
        scales = margin_scales(table, labels)
    margins = np.asarray(scales, dtype=np.float64) * classifier.m
    return _margin_softmax(features, labels, classifier, margins)


def _center_contrast(features, labels, center_ids, centers, temps):
    F = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    temps = np.asarray(temps, dtype=np.float64)
    if np.any(temps <= EPS_TEMP):
        raise DegenerateTemperatureError("temperatures must exceed 1e-8")
    pos = labels[:, None] == np.asarray(center_ids)[None, :]
    if not pos.any(axis=1).all():
        missing = np.unique(labels[~pos.any(axis=1)]).tolist()
        raise MissingPositiveCenterError(f"no sampled center for labels {missing}")
    B = len(labels)
    logits = (F @ centers.T) / temps
    pos_logits = np.where(pos, logits, -np.inf)
    per_sample = log_sum_exp(logits, axis=1) - log_sum_exp(pos_logits, axis=1)
    g = (stable_softmax(logits, axis=1) - stable_softmax(pos_logits, axis=1)) / B
    return float(per_sample.mean()), g, logits, per_sample


def clu_con(features, labels, sample):
    """Supervised contrast of features against sampled cluster centers.

    Each center j uses its own temperature ``sample.temps[j]``.
    """
    value, g, _, per = _center_contrast(features, labels, sample.center_ids,
                                        sample.centers, sample.temps)
    return LossBundle(value, grad_features=(g / sample.temps) @ sample.centers,
                      extra={"per_sample": per})


def clu_con_fixed_temp(features, labels, sample, tau0):
    """As :func:`clu_con` but with one shared temperature ``tau0.tau``."""
    temps = np.full(len(sample.center_ids), tau0.tau)
    value, g, logits, per = _center_contrast(features, labels, sample.center_ids,
                                             sample.centers, temps)
    grad_log = float(-(g * logits).sum())
    return LossBundle(value, grad_features=(g / tau0.tau) @ sample.centers,
                      grad_tau0=grad_log, extra={"per_sample": per})


def clu_ali(sample, classifier, tau):
    """Contrast each sampled cluster center against all K classifier columns."""
    if tau.tau <= EPS_TEMP:
        raise DegenerateTemperatureError("temperature must exceed 1e-8")
    ids = _check_labels(sample.center_ids, classifier.num_classes)
    C = sample.centers
    M = len(ids)
    rows = np.arange(M)
    logits = (C @ classifier.W) / tau.tau
    per = log_sum_exp(logits, axis=1) - logits[rows, ids]
    g = stable_softmax(logits, axis=1)
    g[rows, ids] -= 1.0
    g /= M
    return LossBundle(
        value=float(per.mean()),
        grad_W=C.T @ (g / tau.tau),
        grad_tau=float(-(g * logits).sum()),
        extra={"per_sample": per},
    )


def combine(weighted):
    """Weighted sum of ``(weight, name, bundle)`` triples; gradients add per input."""
    value = 0.0
    grads = {"grad_features": None, "grad_W": None, "grad_tau": None, "grad_tau0": None}
    components = {}
    for weight, name, b in weighted:
        value += weight * b.value
        components[name] = b.value
        for key in grads:
            g = getattr(b, key)
            if g is None:
                continue
            grads[key] = weight * g if grads[key] is None else grads[key] + weight * g
    return LossBundle(value, components=components, **grads)


def overall(features, labels, classifier, table, sample, tau, lambda1=1.0, lambda2=0.5, scales=None):
    """CG-ArcFace + lambda1 * cluster contrast + lambda2 * cluster aligning.

    Terms with a zero weight are skipped, so ``sample`` and ``tau`` may be
    None when their weight is 0.
    """
    if lambda1 < 0 or lambda2 < 0:
        raise ValueError("loss weights must be >= 0")
    parts = [(1.0, "cg_arcface", cg_arcface(features, labels, classifier, table, scales))]
    if lambda1 > 0:
        parts.append((lambda1, "clu_con", clu_con(features, labels, sample)))
    if lambda2 > 0:
        parts.append((lambda2, "clu_ali", clu_ali(sample, classifier, tau)))
    return combine(parts)


def center_loss(features, labels, class_means):
    """Mean squared distance of each feature to its class mean.

    ``class_means`` is a ``{label: vector}`` mapping or a ``(K, d)`` array.
    """
    F = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if isinstance(class_means, dict):
        missing = sorted({int(y) for y in labels} - set(int(k) for k in class_means))
        if missing:
            raise MissingClassMeanError(f"no class mean for labels {missing}")
        means = np.stack([np.asarray(class_means[int(y)], dtype=np.float64) for y in labels]) \
            if len(labels) else np.zeros_like(F)
    else:
        arr = np.asarray(class_means, dtype=np.float64)
        if labels.size and labels.max() >= len(arr):
            raise MissingClassMeanError("label beyond the class-mean table")
        means = arr[labels]
    diff = F - means
    B = max(len(labels), 1)
    return LossBundle(float((diff * diff).sum() / B), grad_features=2.0 * diff / B)


def triplet_loss(anchors, positives, negatives, margin_t=0.2):
    """Mean hinge ``max(0, |a-p|^2 - |a-n|^2 + margin_t)``; subgradient 0 at the kink."""
    a = np.asarray(anchors, dtype=np.float64)
    p = np.asarray(positives, dtype=np.float64)
    n = np.asarray(negatives, dtype=np.float64)
    if not (a.shape == p.shape == n.shape):
        raise LengthMismatchError("anchors, positives and negatives must match")
    if margin_t < 0:
        raise ValueError("margin_t must be >= 0")
    B = max(len(a), 1)
    d_ap = ((a - p) ** 2).sum(axis=1)
    d_an = ((a - n) ** 2).sum(axis=1)
    h = d_ap - d_an + margin_t
    active = (h > 0.0)[:, None]
    return LossBundle(
        float(np.maximum(h, 0.0).sum() / B),
        grad_features=2.0 * (n - p) * active / B,
        extra={"grad_positives": -2.0 * (a - p) * active / B,
               "grad_negatives": 2.0 * (a - n) * active / B},
    )


def gradcheck(loss_fn, inputs, h=1e-5):
    """Compare analytic gradients with central finite differences.

    ``loss_fn(inputs) -> (value, grads)`` where ``grads`` maps a subset of the
    keys of ``inputs`` (arrays or floats) to analytic gradients of the same
    shape. The error of a block is ``|analytic - numeric| / max(|analytic|,
    |numeric|)`` in the Euclidean norm; blocks whose gradients are both
    below 1e-10 score 0.
    """
    if not 1e-7 <= h <= 1e-3:
        raise ValueError("h must lie in [1e-7, 1e-3]")
    base = {k: np.array(v, dtype=np.float64) for k, v in inputs.items()}
    v1, grads = loss_fn({k: v.copy() for k, v in base.items()})
    v2, _ = loss_fn({k: v.copy() for k, v in base.items()})
    if v1 != v2:
        raise NonDeterministicLossError("loss_fn returned different values for identical inputs")
    errors = {}
    for key, analytic in grads.items():
        x = base[key]
        numeric = np.zeros(x.shape)
        flat = numeric.reshape(-1)
        for idx in range(x.size):
            trial = {k: v.copy() for k, v in base.items()}
            t = trial[key].reshape(-1)
            t[idx] += h
            fp, _ = loss_fn(trial)
            t[idx] -= 2 * h
            fm, _ = loss_fn(trial)
            flat[idx] = (fp - fm) / (2 * h)
        analytic = np.asarray(analytic, dtype=np.float64).reshape(x.shape)
        scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
        errors[key] = 0.0 if scale < 1e-10 else float(np.linalg.norm(analytic - numeric) / scale)
    return {"max_rel_err": max(errors.values(), default=0.0), "per_input": errors}
