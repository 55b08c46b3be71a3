"""
Queue, center bank and per-class concentration
==============================================

Features of a spread-out class sit farther from their center, so its
concentration (and its contrastive temperature) is larger.
"""

import numpy as np

from clusterface import ClusterCenterBank, FeatureQueue, bank_update, enqueue, l2_normalize, make_rng
from clusterface.cluster_state import queue_class_centers, refresh_concentrations, sample_classes

rng = make_rng(1)
dim, K = 16, 3
means = l2_normalize(rng.standard_normal((K, dim)))
spread = np.array([0.05, 0.3, 0.9])

queue = FeatureQueue(capacity=300, dim=dim)
bank = ClusterCenterBank(K, dim, momentum=0.9)

for step in range(10):
    y = rng.integers(0, K, 32)
    f = l2_normalize(means[y] + spread[y, None] * rng.standard_normal((32, dim)))
    enqueue(queue, f, y)
    centers, counts = queue_class_centers(queue, K)
    present = np.flatnonzero(counts)
    bank_update(bank, present, centers[present])

table = refresh_concentrations(queue, bank, alpha=10.0)
for k in range(K):
    print(f"class {k}: spread {spread[k]:.2f}  queue entries {int((queue.labels == k).sum()):3d}  "
          f"phi {table.get(k):.4f}")

# every batch class is forced into the sample; temperatures are the phi values
sample = sample_classes(bank, table, required=[0], M=2, rng=rng)
print("sampled ids:", sample.center_ids, "temperatures:", np.round(sample.temps, 4))
