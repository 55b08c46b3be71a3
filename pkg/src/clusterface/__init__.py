"""Cluster-guided margin softmax and supervised cluster-contrastive training in NumPy."""

from .cluster_state import (
    ClassSample,
    ClusterCenterBank,
    ConcentrationTable,
    FeatureQueue,
    LabeledFeature,
    bank_update,
    concentration,
    enqueue,
    queue_class_center,
    refresh_concentrations,
    sample_classes,
)
from .datagen import Dataset, SynthSpec, generate, read_dataset, split, write_dataset
from .encoder import MlpModel, MomentumModel, adam_step, backward, ema_update, forward, lr_schedule
from .evaluation import bcubed_f, dbscan, kmeans, make_pairs, nmi, verification_eval, verification_report
from .losses import (
    Classifier,
    LossBundle,
    TempParam,
    arcface,
    center_loss,
    cg_arcface,
    clu_ali,
    clu_con,
    clu_con_fixed_temp,
    gradcheck,
    margin_scale,
    overall,
    triplet_loss,
)
from .numeric import cosine, l2_normalize, log_sum_exp, make_rng, stable_softmax
from .trainer import TrainConfig, Trainer, ablation_run, compare_losses, train

__version__ = "0.1.0"
