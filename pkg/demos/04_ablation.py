"""
A loss ablation at desk scale
=============================

Every setting is trained on the same per-seed datasets (50 classes, 200
samples each, 30 epochs). This uses two seeds and four settings, about a
minute and a half on one CPU. Much shorter or smaller runs do not separate
the settings; the ordering only emerges once training has converged.
"""

from clusterface import SynthSpec, TrainConfig, ablation_run

config = TrainConfig.for_profile("desk")
table = ablation_run(config, ["baseline", "1", "2", "6"], seeds=[0, 1], synth=SynthSpec())

print(f"{'setting':9s} {'cg':>3s} {'con':>4s} {'ali':>4s} {'nmi':>7s} {'margin':>7s}")
for setting, row in table.items():
    t = row["losses"]
    flag = lambda b: "x" if b else "-"
    print(f"{setting:9s} {flag(t['cg_arcface']):>3s} {flag(t['clu_con']):>4s} {flag(t['clu_ali']):>4s} "
          f"{row['median']['kmeans_nmi']:7.3f} {row['median']['margin']:7.3f}")
