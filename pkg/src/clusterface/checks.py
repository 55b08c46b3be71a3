"""Seeded random loss instances and finite-difference gradient checks over them.

Each loss is wrapped as ``fn(inputs) -> (value, grads)`` so
:func:`clusterface.losses.gradcheck` can perturb every differentiable input.
"""

import numpy as np

from . import losses as L
from .cluster_state import ClassSample, ConcentrationTable
from .numeric import l2_normalize, make_rng

LOSS_NAMES = ("arcface", "cg_arcface", "clu_con", "clu_con_fixed_temp", "clu_ali",
              "center_loss", "triplet_loss")

B, K, D, M = 4, 6, 3, 4


def _unit(rng, n, d=D):
    return l2_normalize(rng.standard_normal((n, d)))


def _sample(rng, labels):
    ids = np.unique(labels)
    extra = np.setdiff1d(np.arange(K), ids)
    ids = np.sort(np.concatenate([ids, rng.choice(extra, M - len(ids), replace=False)]))
    return ClassSample(ids, _unit(rng, len(ids)), rng.uniform(0.05, 0.5, len(ids)))


def make_case(name, seed):
    """``(fn, inputs)`` for one random instance of loss ``name``."""
    rng = make_rng(seed)
    labels = rng.choice(K, size=B, replace=True)
    while len(np.unique(labels)) > M:
        labels = rng.choice(K, size=B, replace=True)
    if name in ("arcface", "cg_arcface"):
        W = _unit(rng, K).T.copy()
        table = ConcentrationTable(rng.uniform(0.1, 0.6, K))

        def fn(inp):
            clf = L.Classifier(inp["W"], s=64.0, m=0.5)
            if name == "arcface":
                b = L.arcface(inp["features"], labels, clf)
            else:
                b = L.cg_arcface(inp["features"], labels, clf, table)
            return b.value, {"features": b.grad_features, "W": b.grad_W}

        return fn, {"features": _unit(rng, B), "W": W}
    if name in ("clu_con", "clu_con_fixed_temp"):
        sample = _sample(rng, labels)

        def fn(inp):
            if name == "clu_con":
                b = L.clu_con(inp["features"], labels, sample)
                return b.value, {"features": b.grad_features}
            tau0 = L.TempParam(float(np.exp(inp["log_tau0"])))
            b = L.clu_con_fixed_temp(inp["features"], labels, sample, tau0)
            return b.value, {"features": b.grad_features, "log_tau0": b.grad_tau0}

        inputs = {"features": _unit(rng, B)}
        if name == "clu_con_fixed_temp":
            inputs["log_tau0"] = np.log(rng.uniform(0.05, 0.5))
        return fn, inputs
    if name == "clu_ali":
        sample = _sample(rng, labels)

        def fn(inp):
            clf = L.Classifier(inp["W"])
            b = L.clu_ali(sample, clf, L.TempParam(float(np.exp(inp["log_tau"]))))
            return b.value, {"W": b.grad_W, "log_tau": b.grad_tau}

        return fn, {"W": _unit(rng, K).T.copy(), "log_tau": np.log(rng.uniform(0.05, 0.5))}
    if name == "center_loss":
        means = rng.standard_normal((K, D))

        def fn(inp):
            b = L.center_loss(inp["features"], labels, means)
            return b.value, {"features": b.grad_features}

        return fn, {"features": _unit(rng, B)}
    if name == "triplet_loss":
        margin = rng.uniform(0.0, 1.0)

        def fn(inp):
            b = L.triplet_loss(inp["anchors"], inp["positives"], inp["negatives"], margin)
            return b.value, {"anchors": b.grad_features, "positives": b.extra["grad_positives"],
                             "negatives": b.extra["grad_negatives"]}

        return fn, {"anchors": _unit(rng, B), "positives": _unit(rng, B), "negatives": _unit(rng, B)}
    raise ValueError(f"unknown loss {name!r}; choose from {LOSS_NAMES}")


def gradcheck_loss(name, seeds=100, h=1e-5, start=0):
    """Worst relative error of ``name`` over ``seeds`` random instances."""
    worst, per_seed = 0.0, []
    for seed in range(start, start + seeds):
        fn, inputs = make_case(name, seed)
        rep = L.gradcheck(fn, inputs, h=h)
        per_seed.append(rep["max_rel_err"])
        worst = max(worst, rep["max_rel_err"])
    return {"loss": name, "seeds": seeds, "h": h, "max_rel_err": worst,
            "median_rel_err": float(np.median(per_seed))}
