"""
Train an encoder and evaluate it
================================

A small synthetic problem trained with all three loss terms, then scored by
k-means NMI and pair-similarity margin on held-out samples.
"""

from clusterface import SynthSpec, TrainConfig, Trainer, generate, make_rng, split

data = generate(SynthSpec(num_classes=10, samples_per_class=60, input_dim=16, seed=0))
train_set, eval_set = split(data, 0.8, make_rng(1))

config = TrainConfig.for_profile("desk", epochs=8, batch_size=32, num_sampled=8, queue_capacity=256,
                                 lr_milestones=[5], embedding_dim=32)
trainer = Trainer(config, train_set)
trainer.run(eval_data=eval_set, eval_every_epoch=True)

for rec in trainer.log.epochs:
    ev = rec["eval"]
    print(f"epoch {rec['epoch']:2d}  loss {rec['mean_total']:7.3f}  nmi {ev['kmeans_nmi']:.3f}  "
          f"margin {ev['margin']:.3f}  tau {rec['tau']:.4f}")
