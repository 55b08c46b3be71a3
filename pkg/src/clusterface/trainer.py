"""Joint training loop and the ablation / loss-comparison harnesses.

One iteration:

1. draw a batch (per-epoch shuffle, uniform over samples)
2. encoder forward
3. momentum-encoder forward on the same inputs, enqueue its features
4. queue class means -> cluster-center bank EMA update
5. refresh concentrations
6. sample M classes, batch labels forced in
7. evaluate the configured loss terms
8. backward, Adam step, renormalize classifier columns
9. EMA update of the momentum encoder

Ablation settings switch the three loss terms on and off:

========  ==========  ==========  ==========
setting   CG-ArcFace  contrast    aligning
========  ==========  ==========  ==========
baseline  -           -           -
1         yes         -           -
2         -           yes         -
3         -           -           yes
4         yes         yes         -
5         yes         -           yes
6         yes         yes         yes
========  ==========  ==========  ==========

When CG-ArcFace is off the classification term is plain ArcFace.
"""

import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import cluster_state as cs
from . import losses as L
from .datagen import SynthSpec, generate, split
from .encoder import (
    AdamState,
    MlpModel,
    MomentumModel,
    adam_step,
    backward,
    ema_update,
    forward,
    lr_schedule,
    save_checkpoint,
)
from .errors import ConfigInvalidError, DatasetTooSmallError, UnknownSettingError
from .evaluation import bcubed_f, kmeans, make_pairs, nmi, verification_report
from .numeric import spawn_rngs

log = logging.getLogger(__name__)

SETTINGS = {
    "baseline": (False, False, False),
    "1": (True, False, False),
    "2": (False, True, False),
    "3": (False, False, True),
    "4": (True, True, False),
    "5": (True, False, True),
    "6": (True, True, True),
}
CONTRASTS = ("clu_con", "center", "triplet")
TEMPERATURES = ("adaptive", "fixed")

PROFILES = {
    "paper": dict(embedding_dim=512, batch_size=512, queue_capacity=8192, num_sampled=2048,
                  epochs=80, lr_milestones=[20, 40, 60], warmup_epochs=2.0),
    "desk": dict(embedding_dim=64, batch_size=64, queue_capacity=1024, num_sampled=32,
                 epochs=30, lr_milestones=[8, 15, 23], warmup_epochs=2.0),
}


@dataclass
class TrainConfig:
    profile: str = "desk"
    embedding_dim: int = 64
    hidden_dims: list = field(default_factory=lambda: [128])
    batch_size: int = 64
    queue_capacity: int = 1024
    m_e: float = 0.999
    m_c: float = 0.9
    alpha: float = 10.0
    num_sampled: int = 32
    margin: float = 0.5
    scale: float = 64.0
    lambda1: float = 1.0
    lambda2: float = 0.5
    base_lr: float = 1e-3
    lr_milestones: list = field(default_factory=lambda: [8, 15, 23])
    lr_gamma: float = 0.1
    epochs: int = 30
    warmup_epochs: float = 2.0
    warmup_iters: int = None  # overrides warmup_epochs when set
    seed: int = 0
    setting: str = "6"
    contrast: str = "clu_con"
    temperature: str = "adaptive"
    tau_init: float = 0.07
    tau0_init: float = 0.07
    min_temp: float = 0.05
    triplet_margin: float = 0.2

    @classmethod
    def for_profile(cls, profile="desk", **overrides):
        if profile not in PROFILES:
            raise ConfigInvalidError(f"unknown profile {profile!r}")
        return cls(profile=profile, **{**PROFILES[profile], **overrides}).validated()

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        profile = d.pop("profile", "desk")
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigInvalidError(f"unknown config keys: {sorted(unknown)}")
        return cls.for_profile(profile, **d)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self):
        return asdict(self)

    @property
    def toggles(self):
        return SETTINGS[self.setting]

    def validated(self):
        self.setting = str(self.setting)
        if self.setting not in SETTINGS:
            raise UnknownSettingError(f"unknown ablation setting {self.setting!r}")
        if self.contrast not in CONTRASTS:
            raise ConfigInvalidError(f"contrast must be one of {CONTRASTS}")
        if self.temperature not in TEMPERATURES:
            raise ConfigInvalidError(f"temperature must be one of {TEMPERATURES}")
        for name in ("m_e", "m_c"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigInvalidError(f"{name} must lie in [0, 1]")
        for name in ("embedding_dim", "batch_size", "queue_capacity", "num_sampled", "epochs",
                     "scale", "base_lr", "alpha", "tau_init", "tau0_init"):
            if getattr(self, name) <= 0:
                raise ConfigInvalidError(f"{name} must be positive")
        if not 0.0 <= self.margin < np.pi / 2:
            raise ConfigInvalidError("margin must lie in [0, pi/2)")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigInvalidError("loss weights must be >= 0")
        return self


@dataclass
class TrainLog:
    seed: int
    iterations: list = field(default_factory=list)
    epochs: list = field(default_factory=list)

    def write_jsonl(self, path):
        with open(path, "w") as fh:
            for rec in self.records():
                fh.write(json.dumps(rec, sort_keys=True) + "\n")

    def records(self):
        by_epoch = {}
        for rec in self.iterations:
            by_epoch.setdefault(rec["epoch"], []).append(rec)
        for summary in self.epochs:
            yield from by_epoch.get(summary["epoch"], [])
            yield summary


def warmup_policy(iteration, config, table, labels, warmup_iters):
    """Margin scale per batch sample.

    Full margin (1) during warm-up and for classes that have no
    concentration yet; the linear concentration map otherwise.
    """
    if iteration < warmup_iters:
        return np.ones(len(labels))
    return L.margin_scales(table, labels)


def evaluate_embeddings(emb, labels, num_classes, seed, num_pairs=3000):
    """Held-out metrics: k-means (k = class count) NMI/BCubed and pair-similarity margin."""
    rng_km, rng_pairs = spawn_rngs(seed + 7919, 2)
    km = kmeans(emb, num_classes, max_iters=100, rng=rng_km)
    b = bcubed_f(km, labels)
    counts = np.bincount(labels)
    n_same = int((counts * (counts - 1) // 2).sum())
    n_cross = len(labels) * (len(labels) - 1) // 2 - n_same
    pairs = make_pairs(labels, min(num_pairs, n_same), min(num_pairs, n_cross), rng_pairs)
    rep = verification_report(emb, pairs)
    return {
        "kmeans_nmi": nmi(km, labels),
        "kmeans_bcubed_f": b["f"],
        "mu_pos": rep.mu_pos,
        "mu_neg": rep.mu_neg,
        "margin": rep.margin,
        "accuracy": rep.accuracy,
        "tar_at_far_1e-3": rep.tar[1e-3],
    }


class Trainer:
    """Holds every piece of mutable training state for one run."""

    def __init__(self, config, dataset):
        config.validated()
        if dataset.num_classes < 2 or len(np.unique(dataset.labels)) < 2:
            raise DatasetTooSmallError("need at least 2 classes")
        if len(dataset) < config.batch_size:
            raise DatasetTooSmallError("dataset smaller than one batch")
        self.config = config
        self.data = dataset
        K = dataset.num_classes
        d = config.embedding_dim
        rng_init, self.rng_batch, self.rng_sample = spawn_rngs(config.seed, 3)
        dims = [dataset.inputs.shape[1], *config.hidden_dims, d]
        self.model = MlpModel.init(dims, rng_init)
        self.momentum_model = MomentumModel.from_model(self.model, config.m_e)
        self.classifier = L.Classifier.init(d, K, rng_init, s=config.scale, m=config.margin)
        self.tau = L.TempParam(config.tau_init)
        self.tau0 = L.TempParam(config.tau0_init)
        self._log_tau = np.array([self.tau.log_tau])
        self._log_tau0 = np.array([self.tau0.log_tau])
        self.queue = cs.FeatureQueue(config.queue_capacity, d)
        self.bank = cs.ClusterCenterBank(K, d, config.m_c)
        self.table = cs.ConcentrationTable.empty(K, config.alpha)
        self.optimizer = AdamState(lr=config.base_lr)
        self.iters_per_epoch = len(dataset) // config.batch_size
        self.warmup_iters = (config.warmup_iters if config.warmup_iters is not None
                             else int(round(config.warmup_epochs * self.iters_per_epoch)))
        self.iteration = 0
        self.log = TrainLog(config.seed)
        self.snapshots = []

    def _params(self):
        return self.model.params() + [self.classifier.W, self._log_tau, self._log_tau0]

    def _contrast_term(self, F, y, sample):
        c = self.config
        if c.contrast == "clu_con":
            if c.temperature == "adaptive":
                return L.clu_con(F, y, sample)
            return L.clu_con_fixed_temp(F, y, sample, self.tau0)
        if c.contrast == "center":
            means = {int(k): v for k, v in zip(sample.center_ids, sample.centers)}
            return L.center_loss(F, y, means)
        return self._triplet_term(F, y)

    def _triplet_term(self, F, y):
        """Anchors are batch features; positives/negatives come from the queue.

        Positive: a random same-class queue entry from earlier batches (any
        same-class entry if none). Negative: the closest cross-class entry
        farther than the positive (semi-hard), else the closest one.
        """
        B = len(y)
        qf, ql = self.queue.features, self.queue.labels
        older = np.arange(len(ql)) < len(ql) - B
        same = y[:, None] == ql[None, :]
        pos_mask = same & older[None, :]
        pos_mask[~pos_mask.any(1)] = same[~pos_mask.any(1)]
        keys = self.rng_sample.random(pos_mask.shape)
        keys[~pos_mask] = -1.0
        p_idx = keys.argmax(1)
        d = 2.0 - 2.0 * (F @ qf.T)
        d_ap = d[np.arange(B), p_idx]
        neg = ~same
        semi = neg & (d > d_ap[:, None])
        d_semi = np.where(semi, d, np.inf)
        d_hard = np.where(neg, d, np.inf)
        n_idx = np.where(semi.any(1), d_semi.argmin(1), d_hard.argmin(1))
        return L.triplet_loss(F, qf[p_idx], qf[n_idx], self.config.triplet_margin)

    def step(self, x, y):
        c = self.config
        use_cg, use_con, use_ali = c.toggles
        K = self.data.num_classes

        F, tape = forward(self.model, x)
        Fm, _ = forward(self.momentum_model, x)
        cs.enqueue(self.queue, Fm, y)
        centers_q, counts = cs.queue_class_centers(self.queue, K)
        present = np.flatnonzero(counts)
        cs.bank_update(self.bank, present, centers_q[present])
        self.table = cs.refresh_concentrations(self.queue, self.bank, c.alpha)

        sample = None
        if (use_con and c.lambda1 > 0) or (use_ali and c.lambda2 > 0):
            required = np.unique(y)
            M = max(c.num_sampled, len(required))
            sample = cs.sample_classes(self.bank, self.table, required, M, self.rng_sample,
                                       min_temp=c.min_temp)

        if use_cg:
            scales = warmup_policy(self.iteration, c, self.table, y, self.warmup_iters)
            cls_term = L.cg_arcface(F, y, self.classifier, scales=scales)
        else:
            cls_term = L.arcface(F, y, self.classifier)
        parts = [(1.0, "cls", cls_term)]
        if use_con and c.lambda1 > 0:
            parts.append((c.lambda1, "con", self._contrast_term(F, y, sample)))
        if use_ali and c.lambda2 > 0:
            parts.append((c.lambda2, "ali", L.clu_ali(sample, self.classifier, self.tau)))
        total = L.combine(parts)

        grads = backward(self.model, tape, total.grad_features)
        zeros1 = np.zeros(1)
        grads += [
            total.grad_W if total.grad_W is not None else np.zeros_like(self.classifier.W),
            np.array([total.grad_tau]) if total.grad_tau is not None else zeros1,
            np.array([total.grad_tau0]) if total.grad_tau0 is not None else zeros1,
        ]
        epoch = self.iteration // self.iters_per_epoch
        lr = lr_schedule(epoch, c.base_lr, c.lr_milestones, c.lr_gamma)
        adam_step(self.optimizer, self._params(), grads, lr=lr)
        self.classifier.renormalize()
        self.tau.log_tau = self._log_tau[0]
        self.tau0.log_tau = self._log_tau0[0]
        ema_update(self.momentum_model, self.model, c.m_e)

        comp = total.components
        rec = {
            "type": "iter",
            "iter": self.iteration,
            "epoch": epoch,
            "lr": lr,
            "loss_cg": comp["cls"],
            "loss_con": comp.get("con", 0.0),
            "loss_ali": comp.get("ali", 0.0),
            "total": total.value,
        }
        self.log.iterations.append(rec)
        self.iteration += 1
        return rec

    def run(self, eval_data=None, out_dir=None, eval_every_epoch=False):
        c = self.config
        t0 = time.perf_counter()
        n = len(self.data)
        for epoch in range(c.epochs):
            order = self.rng_batch.permutation(n)
            recs = []
            for b in range(self.iters_per_epoch):
                idx = order[b * c.batch_size:(b + 1) * c.batch_size]
                recs.append(self.step(self.data.inputs[idx], self.data.labels[idx]))
            summary = {
                "type": "epoch",
                "epoch": epoch,
                "seed": c.seed,
                "mean_total": float(np.mean([r["total"] for r in recs])),
                "mean_loss_cg": float(np.mean([r["loss_cg"] for r in recs])),
                "mean_loss_con": float(np.mean([r["loss_con"] for r in recs])),
                "mean_loss_ali": float(np.mean([r["loss_ali"] for r in recs])),
                "tau": self.tau.tau,
                "tau0": self.tau0.tau,
                # time-dependent values live under one key so reruns can be diffed
                "timestamp": {"wall_clock_s": time.perf_counter() - t0},
            }
            last = epoch == c.epochs - 1
            if eval_data is not None and (eval_every_epoch or last):
                summary["eval"] = self.evaluate(eval_data)
            self.log.epochs.append(summary)
            if out_dir is not None:
                save_checkpoint(self.model, os.path.join(out_dir, f"encoder_epoch{epoch:03d}.ckpt"))
                self.snapshots.append(cs.state_snapshot(self.table, self.bank, epoch))
        if out_dir is not None:
            cs.write_state_dump(self.snapshots, os.path.join(out_dir, "cluster_state.json"))
            self.log.write_jsonl(os.path.join(out_dir, "train_log.jsonl"))
        return self.model, self.log

    def evaluate(self, eval_data):
        emb, _ = forward(self.model, eval_data.inputs)
        return evaluate_embeddings(emb, eval_data.labels, eval_data.num_classes, self.config.seed)


def train(config, dataset, eval_data=None, out_dir=None):
    """Run training; returns ``(model, log)``."""
    return Trainer(config, dataset).run(eval_data=eval_data, out_dir=out_dir)


def _run_one(args):
    config, synth, train_frac = args
    data = generate(replace(synth, seed=config.seed))
    (split_rng,) = spawn_rngs(config.seed + 104729, 1)
    tr, ev = split(data, train_frac, split_rng)
    trainer = Trainer(config, tr)
    trainer.run(eval_data=ev)
    final = trainer.log.epochs[-1]
    return {
        "seed": config.seed,
        "final_total": final["mean_total"],
        "initial_total": trainer.log.epochs[0]["mean_total"],
        **final["eval"],
    }


def _map_runs(jobs, threads):
    if threads and threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(_run_one, jobs))
    return [_run_one(j) for j in jobs]


def _summarize(runs):
    keys = [k for k in runs[0] if k != "seed"]
    return {
        "median": {k: float(np.median([r[k] for r in runs])) for k in keys},
        "runs": runs,
    }


def ablation_run(base_config, settings, seeds, synth=None, train_frac=0.8, threads=1):
    """Train and evaluate each ablation setting on every seed.

    Each seed generates its own synthetic dataset (``synth`` with that seed),
    shared by all settings, so settings are compared on paired data.
    """
    synth = synth or SynthSpec()
    settings = [str(s) for s in settings]
    for s in settings:
        if s not in SETTINGS:
            raise UnknownSettingError(f"unknown ablation setting {s!r}")
    jobs, keys = [], []
    for s in settings:
        for seed in seeds:
            jobs.append((replace(base_config, setting=s, seed=int(seed)).validated(), synth, train_frac))
            keys.append(s)
    results = _map_runs(jobs, threads)
    table = {}
    for s in settings:
        runs = [r for k, r in zip(keys, results) if k == s]
        cg, con, ali = SETTINGS[s]
        table[s] = {"losses": {"cg_arcface": cg, "clu_con": con, "clu_ali": ali}, **_summarize(runs)}
    return table


VARIANTS = {
    "clu_con": dict(contrast="clu_con", temperature="adaptive"),
    "clu_con_fixed": dict(contrast="clu_con", temperature="fixed"),
    "center": dict(contrast="center"),
    "triplet": dict(contrast="triplet"),
}


def compare_losses(base_config, variants, seeds, synth=None, train_frac=0.8, threads=1):
    """Full pipeline (setting 6) with only the contrastive slot swapped per variant."""
    synth = synth or SynthSpec()
    for v in variants:
        if v not in VARIANTS:
            raise ConfigInvalidError(f"unknown loss variant {v!r}")
    jobs, keys = [], []
    for v in variants:
        for seed in seeds:
            cfg = replace(base_config, setting="6", seed=int(seed), **VARIANTS[v]).validated()
            jobs.append((cfg, synth, train_frac))
            keys.append(v)
    results = _map_runs(jobs, threads)
    return {v: _summarize([r for k, r in zip(keys, results) if k == v]) for v in variants}
