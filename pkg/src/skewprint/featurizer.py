"""Sliding-window statistical fingerprints.

A session's raw channels (one per measured function, optionally plus
temperature) are filtered for 3-sigma outliers, then summarised with
trailing windows that all share one end index.  Feature order is
``channel x window size x statistic``, names ``"sleep/10/min"`` etc.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .simulator import MeasurementSession

STATISTICS = ("min", "max", "mean", "median", "sum")
TEMPERATURE_CHANNEL = "temperature"

_STAT_FUNCS = {
    "min": lambda w: w.min(axis=-1),
    "max": lambda w: w.max(axis=-1),
    "mean": lambda w: w.mean(axis=-1),
    "median": lambda w: np.median(w, axis=-1),
    "sum": lambda w: w.sum(axis=-1),
}


class FeaturizerError(ValueError):
    pass


@dataclass(frozen=True)
class WindowConfig:
    window_sizes: tuple[int, ...] = tuple(range(10, 101, 10))
    stride: int = 10
    statistics: tuple[str, ...] = STATISTICS
    include_temperature: bool = False

    def __post_init__(self):
        sizes = tuple(int(w) for w in self.window_sizes)
        object.__setattr__(self, "window_sizes", sizes)
        object.__setattr__(self, "statistics", tuple(self.statistics))
        if not sizes or any(w <= 0 for w in sizes):
            raise FeaturizerError("window sizes must be positive")
        if any(b <= a for a, b in zip(sizes, sizes[1:])):
            raise FeaturizerError("window sizes must be strictly increasing")
        if self.stride <= 0:
            raise FeaturizerError("stride must be positive")
        bad = [s for s in self.statistics if s not in _STAT_FUNCS]
        if bad or not self.statistics:
            raise FeaturizerError(f"unknown statistics: {bad}")

    @property
    def max_window(self) -> int:
        return self.window_sizes[-1]

    def channels(self, functions: Sequence[str]) -> list[str]:
        chans = list(functions)
        if self.include_temperature:
            chans.append(TEMPERATURE_CHANNEL)
        return chans

    def feature_names(self, functions: Sequence[str]) -> list[str]:
        return [
            f"{c}/{w}/{s}"
            for c in self.channels(functions)
            for w in self.window_sizes
            for s in self.statistics
        ]

    def to_dict(self) -> dict[str, Any]:
        return {
            "window_sizes": list(self.window_sizes),
            "stride": self.stride,
            "statistics": list(self.statistics),
            "include_temperature": self.include_temperature,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "WindowConfig":
        return cls(
            window_sizes=tuple(data.get("window_sizes", range(10, 101, 10))),
            stride=int(data.get("stride", 10)),
            statistics=tuple(data.get("statistics", STATISTICS)),
            include_temperature=bool(data.get("include_temperature", False)),
        )


@dataclass
class FeatureVector:
    values: np.ndarray
    feature_names: list[str]
    source_session_id: str
    end_index: int
    label: str | None = None


@dataclass
class ScalerParams:
    """Per-feature ``(min, max)`` for minmax or ``(mean, std)`` for standard."""

    kind: str
    first: np.ndarray
    second: np.ndarray

    def __len__(self) -> int:
        return len(self.first)

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "first": self.first.tolist(), "second": self.second.tolist()}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ScalerParams":
        return cls(
            kind=data["kind"],
            first=np.asarray(data["first"], dtype=float),
            second=np.asarray(data["second"], dtype=float),
        )


def remove_outliers(series: Sequence[float], k_sigma: float = 3.0) -> np.ndarray:
    """Drop values farther than ``k_sigma`` population std from the mean.

    A constant series is returned unchanged.
    """
    x = np.asarray(series, dtype=float)
    if x.size == 0:
        raise FeaturizerError("empty series")
    std = x.std()
    if std == 0:
        return x.copy()
    return x[np.abs(x - x.mean()) <= k_sigma * std]


def _as_matrix(vectors) -> np.ndarray:
    if isinstance(vectors, np.ndarray):
        return np.atleast_2d(vectors).astype(float)
    rows = [v.values if isinstance(v, FeatureVector) else v for v in vectors]
    if not rows:
        return np.empty((0, 0))
    lengths = {len(r) for r in rows}
    if len(lengths) != 1:
        raise FeaturizerError("vectors have non-uniform dimensionality")
    return np.asarray(rows, dtype=float)


def fit_scaler(train_vectors, kind: str = "minmax") -> ScalerParams:
    X = _as_matrix(train_vectors)
    if X.shape[0] == 0:
        raise FeaturizerError("cannot fit scaler on empty input")
    if kind == "minmax":
        return ScalerParams("minmax", X.min(axis=0), X.max(axis=0))
    if kind == "standard":
        return ScalerParams("standard", X.mean(axis=0), X.std(axis=0))
    raise FeaturizerError(f"unknown scaler kind {kind!r}")


def apply_scaler(vector, params: ScalerParams) -> np.ndarray:
    """Scale one vector or a matrix of row vectors; no clamping.

    Degenerate features (zero range or zero std) map to 0.
    """
    X = np.asarray(vector, dtype=float)
    if X.shape[-1] != len(params):
        raise FeaturizerError(f"dimension mismatch: {X.shape[-1]} vs scaler {len(params)}")
    if params.kind == "minmax":
        offset, span = params.first, params.second - params.first
    elif params.kind == "standard":
        offset, span = params.first, params.second
    else:
        raise FeaturizerError(f"unknown scaler kind {params.kind!r}")
    degenerate = span == 0
    safe = np.where(degenerate, 1.0, span)
    return np.where(degenerate, 0.0, (X - offset) / safe)


class FeatureScaler(TransformerMixin, BaseEstimator):
    """Estimator wrapper over :func:`fit_scaler` / :func:`apply_scaler`."""

    def __init__(self, kind="minmax"):
        self.kind = kind

    def fit(self, X, y=None):
        X = check_array(X)
        self.params_ = fit_scaler(X, self.kind)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "params_")
        return apply_scaler(check_array(X), self.params_)


def _session_channels(session: MeasurementSession, cfg: WindowConfig) -> dict[str, np.ndarray]:
    chans = {name: session.channel(name) for name in session.functions}
    if cfg.include_temperature:
        chans[TEMPERATURE_CHANNEL] = session.channel("temp_milli_c") / 1000.0
    return chans


def _window_vectors(
    channels: Mapping[str, np.ndarray], cfg: WindowConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Feature matrix (n_vectors, n_features) and the end index of each row."""
    n = min(len(s) for s in channels.values())
    if n < cfg.max_window:
        raise FeaturizerError(
            f"session too short: {n} measurements < window {cfg.max_window}"
        )
    ends = np.arange(cfg.max_window - 1, n, cfg.stride)
    blocks = []
    for series in channels.values():
        series = series[:n]
        for w in cfg.window_sizes:
            # row j of view is series[j : j + w], i.e. window ending at j + w - 1
            windows = sliding_window_view(series, w)[ends - w + 1]
            for stat in cfg.statistics:
                blocks.append(_STAT_FUNCS[stat](windows))
    return np.column_stack(blocks), ends


def extract_feature_vectors(
    session: MeasurementSession, window_cfg: WindowConfig | None = None
) -> list[FeatureVector]:
    """Windowed statistics over the session's raw channels (no filtering)."""
    cfg = window_cfg or WindowConfig()
    X, ends = _window_vectors(_session_channels(session, cfg), cfg)
    names = cfg.feature_names(session.functions)
    return [
        FeatureVector(row, names, session.session_id, int(e), session.device_id)
        for row, e in zip(X, ends)
    ]


def featurize_session(
    session: MeasurementSession,
    window_cfg: WindowConfig | None = None,
    k_sigma: float | None = 3.0,
) -> list[FeatureVector]:
    """Outlier-filter each channel, then window.

    Filtering shortens channels independently; all channels are truncated to
    the shortest filtered length so each vector has one shared end index.
    """
    cfg = window_cfg or WindowConfig()
    chans = _session_channels(session, cfg)
    if k_sigma is not None:
        chans = {k: remove_outliers(v, k_sigma) for k, v in chans.items()}
    X, ends = _window_vectors(chans, cfg)
    names = cfg.feature_names(session.functions)
    return [
        FeatureVector(row, names, session.session_id, int(e), session.device_id)
        for row, e in zip(X, ends)
    ]


class WindowFeaturizer(TransformerMixin, BaseEstimator):
    """Sessions in, stacked feature matrix out.

    ``transform`` concatenates the vectors of all given sessions; the
    per-row session ids and labels are left in ``session_ids_`` and
    ``labels_`` of the last call.
    """

    def __init__(self, window_cfg=None, k_sigma=3.0):
        self.window_cfg = window_cfg
        self.k_sigma = k_sigma

    def fit(self, sessions=None, y=None):
        return self

    def transform(self, sessions):
        vecs = [v for s in sessions for v in featurize_session(s, self.window_cfg, self.k_sigma)]
        self.session_ids_ = [v.source_session_id for v in vecs]
        self.labels_ = [v.label for v in vecs]
        return _as_matrix(vecs)


@dataclass
class Dataset:
    train_vectors: list[FeatureVector]
    eval_vectors: list[FeatureVector]
    label_map: dict[str, int]
    scaler: ScalerParams
    raw_train_vectors: list[FeatureVector] = field(default_factory=list)
    raw_eval_vectors: list[FeatureVector] = field(default_factory=list)
    window_cfg: WindowConfig = field(default_factory=WindowConfig)

    @property
    def feature_names(self) -> list[str]:
        return self.train_vectors[0].feature_names if self.train_vectors else []

    @property
    def classes(self) -> list[str]:
        return sorted(self.label_map, key=self.label_map.__getitem__)

    def xy(self, which: str = "train") -> tuple[np.ndarray, np.ndarray]:
        vecs = self.train_vectors if which == "train" else self.eval_vectors
        X = _as_matrix(vecs)
        y = np.array([self.label_map[v.label] for v in vecs], dtype=int)
        return X, y

    def eval_sessions(self, raw: bool = True) -> dict[str, list[FeatureVector]]:
        """Eval vectors grouped by source session, in collection order.

        Raw vectors are what a :class:`ModelArtifact` expects (it scales).
        """
        return _group_by_session(self.raw_eval_vectors if raw else self.eval_vectors)

    def train_sessions(self, raw: bool = True) -> dict[str, list[FeatureVector]]:
        return _group_by_session(self.raw_train_vectors if raw else self.train_vectors)


def _group_by_session(vectors: Iterable[FeatureVector]) -> dict[str, list[FeatureVector]]:
    groups: dict[str, list[FeatureVector]] = {}
    for v in vectors:
        groups.setdefault(v.source_session_id, []).append(v)
    return groups


def scale_vectors(vectors: Sequence[FeatureVector], params: ScalerParams) -> list[FeatureVector]:
    if not vectors:
        return []
    scaled = apply_scaler(_as_matrix(vectors), params)
    return [
        FeatureVector(row, v.feature_names, v.source_session_id, v.end_index, v.label)
        for row, v in zip(scaled, vectors)
    ]


def split_sessions(
    sessions_per_device: Mapping[str, Sequence[MeasurementSession]],
    train_count: int,
    window_cfg: WindowConfig | None = None,
    scaler_kind: str = "minmax",
    k_sigma: float | None = 3.0,
) -> Dataset:
    """First ``train_count`` sessions of each device train, the rest evaluate.

    The scaler is fitted on the training vectors only.
    """
    cfg = window_cfg or WindowConfig()
    for dev, sessions in sessions_per_device.items():
        if len(sessions) < train_count + 1:
            raise FeaturizerError(
                f"device {dev} has {len(sessions)} sessions; need at least {train_count + 1}"
            )
    if not sessions_per_device:
        raise FeaturizerError("no devices")
    label_map = {dev: i for i, dev in enumerate(sorted(sessions_per_device))}
    raw_train: list[FeatureVector] = []
    raw_eval: list[FeatureVector] = []
    for dev in sorted(sessions_per_device):
        for k, session in enumerate(sessions_per_device[dev]):
            vecs = featurize_session(session, cfg, k_sigma)
            for v in vecs:
                v.label = dev
            (raw_train if k < train_count else raw_eval).extend(vecs)
    scaler = fit_scaler(raw_train, scaler_kind)
    return Dataset(
        train_vectors=scale_vectors(raw_train, scaler),
        eval_vectors=scale_vectors(raw_eval, scaler),
        label_map=label_map,
        scaler=scaler,
        raw_train_vectors=raw_train,
        raw_eval_vectors=raw_eval,
        window_cfg=cfg,
    )


def write_feature_csv(path, vectors: Sequence[FeatureVector]) -> None:
    """CSV with one header row of feature names plus a trailing ``label`` column."""
    if not vectors:
        raise FeaturizerError("no vectors to write")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(vectors[0].feature_names) + ["label"])
        for v in vectors:
            w.writerow([repr(float(x)) for x in v.values] + [v.label or ""])


def read_feature_csv(path) -> tuple[list[str], np.ndarray, list[str]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    X = np.array([[float(x) for x in r[:-1]] for r in body], dtype=float)
    return header[:-1], X, [r[-1] for r in body]


def expected_vector_count(n_measurements: int, cfg: WindowConfig | None = None) -> int:
    cfg = cfg or WindowConfig()
    if n_measurements < cfg.max_window:
        return 0
    return (n_measurements - cfg.max_window) // cfg.stride + 1


def expected_dimension(n_functions: int, cfg: WindowConfig | None = None) -> int:
    cfg = cfg or WindowConfig()
    channels = n_functions + (1 if cfg.include_temperature else 0)
    return channels * len(cfg.window_sizes) * len(cfg.statistics)


__all__ = [
    "STATISTICS", "WindowConfig", "FeatureVector", "ScalerParams", "Dataset",
    "FeaturizerError", "remove_outliers", "fit_scaler", "apply_scaler",
    "FeatureScaler", "extract_feature_vectors", "featurize_session",
    "WindowFeaturizer", "split_sessions", "scale_vectors", "write_feature_csv",
    "read_feature_csv", "expected_vector_count", "expected_dimension",
]
