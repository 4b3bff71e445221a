"""Data-efficiency sweeps: probe quality as a function of training-set size."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field

import numpy as np
from joblib import Parallel, delayed
from sklearn.model_selection import train_test_split

from ..errors import FractionTooSmall, SingleClass
from ._validation import check_embeddings
from .metrics import roc_auc
from .probes import make_probe


@dataclass
class LabeledEmbeddingSet:
    embeddings: np.ndarray
    labels: np.ndarray
    task_name: str = "task"
    ids: list | None = None

    def __post_init__(self):
        self.embeddings, self.labels = check_embeddings(self.embeddings, self.labels)
        if len(self.labels) < 2:
            raise ValueError("need at least two examples")
        if np.unique(self.labels).size < 2:
            raise SingleClass("every class must have at least one example")

    def __len__(self):
        return len(self.labels)


@dataclass(frozen=True)
class SweepRecord:
    task: str
    probe_kind: str
    train_fraction: float
    seed: int
    roc_auc: float
    n_train: int


@dataclass
class ProbeSweepResult:
    records: list[SweepRecord] = field(default_factory=list)

    def mean_auc(self, fraction: float, probe_kind: str | None = None) -> float:
        vals = [
            r.roc_auc
            for r in self.records
            if r.train_fraction == fraction and (probe_kind is None or r.probe_kind == probe_kind)
        ]
        return float(np.mean(vals)) if vals else float("nan")

    def fractions(self) -> list[float]:
        return sorted({r.train_fraction for r in self.records})

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(SweepRecord.__dataclass_fields__), lineterminator="\n")
            writer.writeheader()
            for r in self.records:
                row = asdict(r)
                row["roc_auc"] = repr(r.roc_auc)
                writer.writerow(row)


def stratified_subsample(labels, fraction: float, seed: int) -> np.ndarray:
    """Indices of a class-stratified subsample of ``round(fraction * N)`` examples.

    Per-class quotas ``fraction * n_class`` are floored and the leftover slots
    go to the classes with the largest remainders. Every class keeps at least
    one example. Indices come back sorted, so ``fraction=1`` is the identity.
    """
    labels = np.asarray(labels)
    if not 0 < fraction <= 1:
        raise FractionTooSmall(f"fraction must be in (0, 1], got {fraction}")
    classes, counts = np.unique(labels, return_counts=True)
    target = int(round(fraction * len(labels)))
    if target < len(classes):
        raise FractionTooSmall(
            f"fraction {fraction} of {len(labels)} examples leaves {target}, fewer than one per class"
        )
    quotas = fraction * counts
    take = np.floor(quotas).astype(int)
    remainder = quotas - take
    # stable sort keeps ties in class order
    for i in np.argsort(-remainder, kind="stable")[: max(0, target - take.sum())]:
        take[i] += 1
    take[take == 0] = 1
    while take.sum() > target:
        take[np.argmax(take)] -= 1
    rng = np.random.default_rng(seed)
    chosen = [rng.choice(np.flatnonzero(labels == c), size=k, replace=False) for c, k in zip(classes, take)]
    return np.sort(np.concatenate(chosen))


def fit_and_score(X_train, y_train, X_eval, y_eval, probe_kind="linear", seed=0, **probe_params) -> float:
    probe = make_probe(probe_kind, seed=seed, **probe_params).fit(X_train, y_train)
    positive = probe.classes_[1]
    return roc_auc(probe.score_samples(X_eval), (y_eval == positive).astype(int))


def _cell(data, train_idx, eval_idx, fraction, seed, probe_kind, probe_params):
    y_train = data.labels[train_idx]
    sub = train_idx[stratified_subsample(y_train, fraction, seed)]
    auc = fit_and_score(
        data.embeddings[sub],
        data.labels[sub],
        data.embeddings[eval_idx],
        data.labels[eval_idx],
        probe_kind,
        seed,
        **probe_params,
    )
    return SweepRecord(data.task_name, probe_kind, float(fraction), int(seed), auc, int(len(sub)))


def data_efficiency_sweep(
    data: LabeledEmbeddingSet,
    fractions,
    probe_kind: str = "linear",
    seeds=5,
    test_size: float = 0.3,
    split_seed: int = 0,
    n_jobs: int = 1,
    probe_params: dict | None = None,
) -> ProbeSweepResult:
    """Fit one probe per (fraction, seed) on a stratified subsample of a fixed
    training split and score ROC AUC on the held-out split, which never changes.

    ``seeds`` is either a count (seeds ``0..n-1``) or an explicit list.
    """
    fractions = [float(f) for f in fractions]
    if fractions != sorted(fractions):
        raise ValueError("fractions must be sorted ascending")
    seeds = list(range(seeds)) if isinstance(seeds, int) else list(seeds)
    idx = np.arange(len(data))
    train_idx, eval_idx = train_test_split(idx, test_size=test_size, stratify=data.labels, random_state=split_seed)
    train_idx, eval_idx = np.sort(train_idx), np.sort(eval_idx)
    # validate every fraction before spending time on fits
    for f in fractions:
        stratified_subsample(data.labels[train_idx], f, 0)
    cells = [(f, s) for f in fractions for s in seeds]
    records = Parallel(n_jobs=n_jobs)(
        delayed(_cell)(data, train_idx, eval_idx, f, s, probe_kind, probe_params or {}) for f, s in cells
    )
    return ProbeSweepResult(list(records))
