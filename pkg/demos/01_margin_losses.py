"""
Margin softmax with a concentration-scaled margin
=================================================

A tight class gets a small margin and a loose class gets the full one.
"""

import numpy as np

from clusterface import Classifier, arcface, cg_arcface, gradcheck, l2_normalize, make_rng
from clusterface.cluster_state import ConcentrationTable
from clusterface.losses import margin_scales

rng = make_rng(0)

# four classes on the unit sphere in 8 dims, one feature per class
W = l2_normalize(rng.standard_normal((4, 8))).T.copy()
F = l2_normalize(W.T + 0.4 * rng.standard_normal((4, 8)))
labels = np.arange(4)
clf = Classifier(W, s=32.0, m=0.5)

# class 0 is the tightest and class 3 the loosest
table = ConcentrationTable(np.array([0.10, 0.20, 0.30, 0.40]))

plain = arcface(F, labels, clf)
guided = cg_arcface(F, labels, clf, table)
print("per-sample margin scale:", margin_scales(table, labels))
print("arcface    per sample:", np.round(plain.extra["per_sample"], 3))
print("cg-arcface per sample:", np.round(guided.extra["per_sample"], 3))

# analytic vs finite-difference gradient for the guided loss
def fn(inp):
    b = cg_arcface(inp["features"], labels, Classifier(inp["W"], 32.0, 0.5), table)
    return b.value, {"features": b.grad_features, "W": b.grad_W}

report = gradcheck(fn, {"features": F, "W": W})
print("max relative gradient error:", report["max_rel_err"])
