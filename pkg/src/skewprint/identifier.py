"""Device-level identity decisions from per-vector predictions.

A claim is accepted when the fraction of a session's vectors that match
the claimed identity reaches the threshold (``>=``).  For a classifier a
vector matches when it is classified as the claimed device; for a
per-device LOF model it matches when its LOF score is at most the cutoff.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .featurizer import FeatureVector
from .learners import ModelArtifact
from .metrics import ConfusionMatrix, MetricsReport, class_metrics, confusion_matrix

INLIER = "inlier"
OUTLIER = "outlier"


class IdentificationError(ValueError):
    pass


@dataclass
class IdentificationDecision:
    claimed_device_id: str
    vectors_total: int
    vectors_matching_claim: int
    match_fraction: float
    threshold: float
    verdict: str
    votes: dict[str, int] = field(default_factory=dict)

    @property
    def accepted(self) -> bool:
        return self.verdict == "accept"

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


def _vectors(vectors) -> np.ndarray:
    rows = [v.values if isinstance(v, FeatureVector) else np.asarray(v, dtype=float) for v in vectors]
    if not rows:
        raise IdentificationError("empty vector list")
    return np.vstack(rows)


def decide_identity(
    model: ModelArtifact | Mapping[str, ModelArtifact],
    vectors: Sequence,
    claimed_device_id: str,
    threshold: float = 0.5,
    lof_cutoff: float = 1.5,
) -> IdentificationDecision:
    """Accept/reject one session's raw vectors against a claimed identity.

    ``model`` is a classifier artifact, a single LOF artifact trained on the
    claimed device, or a mapping ``device_id -> LOF artifact``.
    """
    X = _vectors(vectors)
    if isinstance(model, Mapping):
        if claimed_device_id not in model:
            raise IdentificationError(f"unknown device {claimed_device_id!r}")
        model = model[claimed_device_id]

    if model.is_anomaly_model:
        if model.metadata.get("device_id") != claimed_device_id:
            raise IdentificationError(f"unknown device {claimed_device_id!r}")
        return _anomaly_decision(model.predict(X), claimed_device_id, threshold, lof_cutoff)
    if claimed_device_id not in model.label_map:
        raise IdentificationError(f"unknown device {claimed_device_id!r}")
    return _vote_decision(model.predict(X), claimed_device_id, threshold)


def _verdict(claim, matching, total, threshold, votes) -> IdentificationDecision:
    fraction = matching / total
    return IdentificationDecision(
        claimed_device_id=claim,
        vectors_total=total,
        vectors_matching_claim=matching,
        match_fraction=fraction,
        threshold=threshold,
        verdict="accept" if fraction >= threshold else "reject",
        votes=votes,
    )


def _vote_decision(preds, claim, threshold) -> IdentificationDecision:
    labels, counts = np.unique(np.asarray(preds).astype(str), return_counts=True)
    votes = {str(lab): int(c) for lab, c in zip(labels, counts)}
    return _verdict(claim, votes.get(claim, 0), len(preds), threshold, votes)


def _anomaly_decision(scores, claim, threshold, cutoff) -> IdentificationDecision:
    inlier = np.asarray(scores) <= cutoff
    votes = {INLIER: int(inlier.sum()), OUTLIER: int((~inlier).sum())}
    return _verdict(claim, votes[INLIER], len(inlier), threshold, votes)


@dataclass
class SessionDecisions:
    session_id: str
    true_device_id: str
    true_claim: IdentificationDecision
    false_claims: dict[str, IdentificationDecision]

    @property
    def accepted_false_claims(self) -> list[str]:
        return [d for d, dec in self.false_claims.items() if dec.accepted]


@dataclass
class FleetEvaluation:
    sessions: list[SessionDecisions]
    matrix: ConfusionMatrix | None
    metrics: MetricsReport | None
    cross_acceptance_count: int
    # anomaly path: fraction of each device's own vectors scored inlier
    inlier_rate: dict[str, float] = field(default_factory=dict)

    @property
    def decisions(self) -> list[IdentificationDecision]:
        out = []
        for s in self.sessions:
            out.append(s.true_claim)
            out.extend(s.false_claims.values())
        return out

    @property
    def true_claims_accepted(self) -> int:
        return sum(s.true_claim.accepted for s in self.sessions)

    def devices_all_accepted(self) -> dict[str, bool]:
        out: dict[str, bool] = {}
        for s in self.sessions:
            out[s.true_device_id] = out.get(s.true_device_id, True) and s.true_claim.accepted
        return out

    def write_decisions_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for s in self.sessions:
                for claim, dec in [(s.true_device_id, s.true_claim), *s.false_claims.items()]:
                    row = {"session_id": s.session_id, "true_device_id": s.true_device_id,
                           **dec.to_dict()}
                    fh.write(json.dumps(row, sort_keys=True, separators=(",", ":")) + "\n")


def evaluate_fleet(
    model: ModelArtifact | Mapping[str, ModelArtifact],
    eval_sessions: Mapping[str, Sequence[FeatureVector]],
    threshold: float = 0.5,
    lof_cutoff: float = 1.5,
) -> FleetEvaluation:
    """Decide every session under its true claim and every false claim.

    ``eval_sessions`` maps session id to that session's raw, labelled
    vectors.  ``model`` is a classifier artifact or a mapping of per-device
    LOF artifacts.
    """
    if not eval_sessions:
        raise IdentificationError("empty eval set")
    if isinstance(model, Mapping):
        identities = sorted(model)
    else:
        identities = model.labels
    preds_all: list[str] = []
    truths_all: list[str] = []
    inlier_hits: dict[str, list[int]] = {}
    results = []
    for sid, vecs in eval_sessions.items():
        if not vecs:
            raise IdentificationError(f"session {sid} has no vectors")
        truth = vecs[0].label
        if truth not in identities:
            raise IdentificationError(f"unknown device {truth!r}")
        if isinstance(model, Mapping):
            decs = {
                claim: decide_identity(model, vecs, claim, threshold, lof_cutoff)
                for claim in identities
            }
            hits = inlier_hits.setdefault(truth, [0, 0])
            hits[0] += decs[truth].vectors_matching_claim
            hits[1] += decs[truth].vectors_total
        else:
            preds = model.predict(_vectors(vecs))
            decs = {claim: _vote_decision(preds, claim, threshold) for claim in identities}
            preds_all.extend(str(p) for p in preds)
            truths_all.extend([truth] * len(vecs))
        true_dec = decs.pop(truth)
        results.append(SessionDecisions(sid, truth, true_dec, decs))

    matrix = metrics = None
    if truths_all:
        matrix = confusion_matrix(preds_all, truths_all, labels=identities)
        metrics = class_metrics(matrix)
    cross = sum(len(s.accepted_false_claims) for s in results)
    return FleetEvaluation(
        sessions=results,
        matrix=matrix,
        metrics=metrics,
        cross_acceptance_count=cross,
        inlier_rate={d: h[0] / h[1] for d, h in inlier_hits.items()},
    )
