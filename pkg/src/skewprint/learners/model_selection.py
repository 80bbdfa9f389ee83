"""Leave-sessions-out cross-validated grid search."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from ..featurizer import Dataset, FeatureVector, _as_matrix, apply_scaler, fit_scaler
from ..metrics import class_metrics, confusion_matrix
from .artifact import CLASSIFIERS, AlgorithmSpec
from .base import LearnerError


@dataclass
class CandidateResult:
    spec: AlgorithmSpec
    fold_tprs: list[float]

    @property
    def mean_tpr(self) -> float:
        return float(np.mean(self.fold_tprs))

    @property
    def std_tpr(self) -> float:
        return float(np.std(self.fold_tprs))


@dataclass
class CvReport:
    candidates: list[CandidateResult]
    best_index: int
    fold_of_session: dict[str, int] = field(default_factory=dict)

    @property
    def best(self) -> AlgorithmSpec:
        return self.candidates[self.best_index].spec

    def summary(self) -> list[dict[str, Any]]:
        return [
            {"spec": c.spec.to_dict(), "mean_tpr": c.mean_tpr, "std_tpr": c.std_tpr,
             "fold_tprs": list(c.fold_tprs)}
            for c in self.candidates
        ]


def expand_grid(name: str, **axes: Sequence[Any]) -> list[AlgorithmSpec]:
    """Cartesian product of hyperparameter axes, last axis varying fastest."""
    keys = list(axes)
    return [
        AlgorithmSpec(name, dict(zip(keys, combo)))
        for combo in itertools.product(*(axes[k] for k in keys))
    ]


def _session_groups(train_sessions) -> dict[str, list[FeatureVector]]:
    if isinstance(train_sessions, Dataset):
        return train_sessions.train_sessions(raw=True)
    if isinstance(train_sessions, Mapping):
        return {sid: list(vs) for sid, vs in train_sessions.items()}
    groups: dict[str, list[FeatureVector]] = {}
    for vecs in train_sessions:
        vecs = list(vecs)
        if vecs:
            groups[vecs[0].source_session_id] = vecs
    return groups


def assign_folds(groups: Mapping[str, Sequence[FeatureVector]], folds: int) -> dict[str, int]:
    """The k-th session of every device (collection order) goes to fold ``k % folds``."""
    seen: dict[str, int] = {}
    out: dict[str, int] = {}
    for sid, vecs in groups.items():
        dev = vecs[0].label
        k = seen.get(dev, 0)
        out[sid] = k % folds
        seen[dev] = k + 1
    short = sorted(dev for dev, n in seen.items() if n < folds)
    if short:
        raise LearnerError(f"fewer sessions than folds ({folds}) for devices {short}")
    return out


def grid_search_cv(
    grid: Iterable[AlgorithmSpec],
    train_sessions,
    folds: int = 6,
    scaler_kind: str = "minmax",
    seed: int = 0,
) -> CvReport:
    """Score every candidate by mean per-vector macro TPR over session folds.

    ``train_sessions`` is a :class:`Dataset` (its raw training vectors are
    used), a mapping ``session_id -> raw vectors`` or an iterable of
    per-session vector lists.  The scaler is refitted inside every fold.
    Ties in mean TPR keep the earliest candidate.
    """
    grid = list(grid)
    if not grid:
        raise LearnerError("empty grid")
    if folds < 2:
        raise LearnerError("need at least 2 folds")
    for spec in grid:
        if spec.name not in CLASSIFIERS:
            raise LearnerError(f"{spec.name} is not a classifier")
    groups = _session_groups(train_sessions)
    fold_of = assign_folds(groups, folds)
    labels = sorted({vecs[0].label for vecs in groups.values()})
    index = {lab: i for i, lab in enumerate(labels)}

    splits = []
    for f in range(folds):
        tr = [v for sid, vs in groups.items() if fold_of[sid] != f for v in vs]
        te = [v for sid, vs in groups.items() if fold_of[sid] == f for v in vs]
        if not te:
            continue
        scaler = fit_scaler(tr, scaler_kind)
        Xtr = apply_scaler(_as_matrix(tr), scaler)
        Xte = apply_scaler(_as_matrix(te), scaler)
        ytr = np.array([index[v.label] for v in tr])
        yte = np.array([index[v.label] for v in te])
        splits.append((Xtr, ytr, Xte, yte))

    results = []
    for spec in grid:
        tprs = []
        for Xtr, ytr, Xte, yte in splits:
            est = spec.build(seed).fit(Xtr, ytr)
            pred = est.predict(Xte)
            cm = confusion_matrix(pred.tolist(), yte.tolist(), labels=range(len(labels)))
            tprs.append(class_metrics(cm).macro_tpr)
        results.append(CandidateResult(spec, tprs))

    best = 0
    for i, r in enumerate(results):
        if r.mean_tpr > results[best].mean_tpr:
            best = i
    return CvReport(results, best, fold_of)
