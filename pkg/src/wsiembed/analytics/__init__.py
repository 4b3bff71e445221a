"""Downstream evaluation on embeddings: probes, ROC AUC, data-efficiency sweeps, k-means."""

from .clustering import ClusterMap, KMeans, cluster_overlay, kmeans, save_overlay
from .metrics import roc_auc
from .synthetic import random_labels, separable_blobs, xor_clusters
from .probes import LinearProbe, MLPProbe, make_probe, train_linear_probe, train_mlp_probe
from .sweep import (
    LabeledEmbeddingSet,
    ProbeSweepResult,
    SweepRecord,
    data_efficiency_sweep,
    stratified_subsample,
)

__all__ = [
    "ClusterMap",
    "KMeans",
    "LabeledEmbeddingSet",
    "LinearProbe",
    "MLPProbe",
    "ProbeSweepResult",
    "SweepRecord",
    "cluster_overlay",
    "data_efficiency_sweep",
    "kmeans",
    "make_probe",
    "roc_auc",
    "save_overlay",
    "stratified_subsample",
    "train_linear_probe",
    "train_mlp_probe",
]
