"""Z-score normalization of proprioception and action rows.

Statistics are fitted per dimension over every proprioception row and every
action row, in a single Welford pass (parallel partial accumulators merge
deterministically). The default is one unified statistic across human and
robot samples, so training-time and deployment-time normalization coincide;
the per-domain variant is available as the ablation switch and is exactly
the mechanism that makes identical raw values normalize differently across
domains. Standard deviations use the population (divide-by-N) convention;
near-constant dimensions fall back to std 1 and are recorded.

All 15 row dimensions are normalized alike, including the rotation-6d block.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator

from .dataset import Domain
from .transform import ROW_DIM, TrainingSample

EPS_STD = 1e-6
STREAMS = ("proprio", "action")


class Welford:
    """Single-pass mean/variance accumulator with deterministic merging."""

    def __init__(self, dim: int):
        self.n = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)

    def add(self, rows: np.ndarray) -> None:
        for row in np.atleast_2d(rows):
            self.n += 1
            delta = row - self.mean
            self.mean += delta / self.n
            self.m2 += delta * (row - self.mean)

    def merge(self, other: "Welford") -> None:
        if other.n == 0:
            return
        if self.n == 0:
            self.n, self.mean, self.m2 = other.n, other.mean.copy(), other.m2.copy()
            return
        delta = other.mean - self.mean
        n = self.n + other.n
        self.mean = self.mean + delta * (other.n / n)
        self.m2 = self.m2 + other.m2 + delta * delta * (self.n * other.n / n)
        self.n = n

    def finalize(self) -> tuple[np.ndarray, np.ndarray]:
        if self.n == 0:
            raise ValueError("no rows accumulated")
        return self.mean.copy(), np.sqrt(self.m2 / self.n)  # population convention


@dataclass
class StreamStats:
    mean: np.ndarray
    std: np.ndarray
    eps_replaced: list[int] = field(default_factory=list)


@dataclass
class NormStats:
    mode: str                                  # "unified" | "per_domain"
    streams: dict[str, StreamStats]            # unified stats per stream
    per_domain: dict[str, dict[str, StreamStats]] | None = None
    source_hash: str = ""
    std_convention: str = "population"

    def stats_for(self, stream: str, domain: Domain | None = None) -> StreamStats:
        if stream not in STREAMS:
            raise ValueError(f"unknown stream {stream!r}")
        if self.mode == "per_domain":
            if domain is None:
                raise ValueError("per_domain stats require a domain")
            return self.per_domain[Domain(domain).value][stream]
        return self.streams[stream]


def _rows_by_stream(samples: list[TrainingSample]) -> dict[str, np.ndarray]:
    return {
        "proprio": np.concatenate([s.proprio for s in samples], axis=0),
        "action": np.concatenate([s.action for s in samples], axis=0),
    }


def _finalize(acc: Welford) -> StreamStats:
    mean, std = acc.finalize()
    replaced = [int(i) for i in np.nonzero(std < EPS_STD)[0]]
    if replaced:
        std = std.copy()
        std[replaced] = 1.0
    return StreamStats(mean, std, replaced)


def _samples_hash(samples: list[TrainingSample]) -> str:
    h = hashlib.sha256()
    for s in samples:
        h.update(s.episode_id.encode())
        h.update(int(s.frame_index).to_bytes(4, "little"))
    return h.hexdigest()[:16]


def fit_stats(samples: list[TrainingSample], mode: str = "unified",
              n_partitions: int = 1) -> NormStats:
    """Per-dimension mean/std over all proprio rows and all action rows.

    ``n_partitions > 1`` exercises the parallel accumulation path: the sample
    list is split, accumulated independently and merged in fixed order.
    """
    if len(samples) < 2:
        raise ValueError("need at least 2 samples to fit statistics")
    if mode not in ("unified", "per_domain"):
        raise ValueError(f"unknown normalization mode {mode!r}")

    def accumulate(subset: list[TrainingSample]) -> dict[str, Welford]:
        accs = {stream: Welford(ROW_DIM) for stream in STREAMS}
        if subset:
            rows = _rows_by_stream(subset)
            for stream in STREAMS:
                accs[stream].add(rows[stream])
        return accs

    parts = np.array_split(np.arange(len(samples)), max(1, n_partitions))
    merged = {stream: Welford(ROW_DIM) for stream in STREAMS}
    for part in parts:
        accs = accumulate([samples[i] for i in part])
        for stream in STREAMS:
            merged[stream].merge(accs[stream])
    streams = {stream: _finalize(merged[stream]) for stream in STREAMS}

    per_domain = None
    if mode == "per_domain":
        per_domain = {}
        for domain in (Domain.HUMAN, Domain.ROBOT):
            subset = [s for s in samples if s.domain is domain]
            if not subset:
                raise ValueError(f"per_domain mode requires {domain.value} samples")
            accs = accumulate(subset)
            per_domain[domain.value] = {stream: _finalize(accs[stream]) for stream in STREAMS}
    return NormStats(mode, streams, per_domain, source_hash=_samples_hash(samples))


def normalize_rows(rows: np.ndarray, stats: NormStats, stream: str,
                   domain: Domain | None = None) -> np.ndarray:
    rows = np.asarray(rows, dtype=np.float64)
    if rows.shape[-1] != ROW_DIM:
        raise ValueError(f"expected rows of dimension {ROW_DIM}, got {rows.shape[-1]}")
    st = stats.stats_for(stream, domain)
    return (rows - st.mean) / st.std


def denormalize_rows(rows: np.ndarray, stats: NormStats, stream: str,
                     domain: Domain | None = None) -> np.ndarray:
    rows = np.asarray(rows, dtype=np.float64)
    if rows.shape[-1] != ROW_DIM:
        raise ValueError(f"expected rows of dimension {ROW_DIM}, got {rows.shape[-1]}")
    st = stats.stats_for(stream, domain)
    return rows * st.std + st.mean


def normalize_sample(sample: TrainingSample, stats: NormStats) -> TrainingSample:
    from dataclasses import replace

    return replace(
        sample,
        proprio=normalize_rows(sample.proprio, stats, "proprio", sample.domain),
        action=normalize_rows(sample.action, stats, "action", sample.domain),
    )


class ZScoreNormalizer(BaseEstimator):
    """fit/transform/inverse_transform over TrainingSample lists."""

    def __init__(self, mode: str = "unified"):
        self.mode = mode

    def fit(self, X: list[TrainingSample], y=None):
        self.stats_ = fit_stats(X, self.mode)
        return self

    def transform(self, X: list[TrainingSample]) -> list[TrainingSample]:
        self._check_fitted()
        return [normalize_sample(s, self.stats_) for s in X]

    def inverse_transform(self, X: list[TrainingSample]) -> list[TrainingSample]:
        from dataclasses import replace

        self._check_fitted()
        return [
            replace(
                s,
                proprio=denormalize_rows(s.proprio, self.stats_, "proprio", s.domain),
                action=denormalize_rows(s.action, self.stats_, "action", s.domain),
            )
            for s in X
        ]

    def _check_fitted(self):
        if not hasattr(self, "stats_"):
            raise ValueError("normalizer is not fitted")


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def _stream_to_json(st: StreamStats) -> dict:
    return {
        "mean": [float(v) for v in st.mean],
        "std": [float(v) for v in st.std],
        "eps_replaced": st.eps_replaced,
    }


def _stream_from_json(d: dict) -> StreamStats:
    return StreamStats(np.asarray(d["mean"]), np.asarray(d["std"]), list(d["eps_replaced"]))


def save_stats(stats: NormStats, path: str | Path) -> None:
    doc = {
        "schema": "mt-norm v1",
        "mode": stats.mode,
        "std_convention": stats.std_convention,
        "epsilon_policy": {"threshold": EPS_STD, "replacement": 1.0},
        "source_hash": stats.source_hash,
        "streams": {k: _stream_to_json(v) for k, v in stats.streams.items()},
    }
    if stats.per_domain is not None:
        doc["per_domain"] = {
            dom: {k: _stream_to_json(v) for k, v in streams.items()}
            for dom, streams in stats.per_domain.items()
        }
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def load_stats(path: str | Path) -> NormStats:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("schema") != "mt-norm v1":
        raise ValueError(f"unsupported normalization schema {doc.get('schema')!r}")
    per_domain = None
    if "per_domain" in doc:
        per_domain = {
            dom: {k: _stream_from_json(v) for k, v in streams.items()}
            for dom, streams in doc["per_domain"].items()
        }
    return NormStats(
        doc["mode"],
        {k: _stream_from_json(v) for k, v in doc["streams"].items()},
        per_domain,
        doc.get("source_hash", ""),
        doc.get("std_convention", "population"),
    )
