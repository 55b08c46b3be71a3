"""
Clustering and partition metrics
================================

k-means and DBSCAN on three blobs plus a stray point, scored with NMI and
BCubed F. DBSCAN noise counts as singleton clusters.
"""

import numpy as np

from clusterface import bcubed_f, dbscan, kmeans, make_rng, nmi

rng = make_rng(3)
centers = np.array([[0.0, 0.0], [4.0, 0.0], [2.0, 3.5]])
x = np.concatenate([c + 0.4 * rng.standard_normal((40, 2)) for c in centers] + [[[10.0, 10.0]]])
truth = np.r_[np.repeat([0, 1, 2], 40), 2]

# with k=3 the stray point can claim a center of its own and merge two blobs
km = kmeans(x, 3, rng=make_rng(4))
db = dbscan(x, eps=0.6, min_pts=4)
print("k-means inertia per iteration:", np.round(km.inertia_history, 2))
print(f"k-means  nmi {nmi(km, truth):.3f}  bcubed f {bcubed_f(km, truth)['f']:.3f}")
print(f"dbscan   nmi {nmi(db, truth):.3f}  bcubed f {bcubed_f(db, truth)['f']:.3f}  "
      f"clusters {db.num_clusters}  noise {int((db.assignment == -1).sum())}")
