"""Server round loop and aggregation rules.

Every round all clients start from the broadcast global model (or their own
model for local-only training), train locally, and upload parameters. The
server then forms a weighted parameter average: sample counts for FedAvg,
label weights ``sum_l count_l ** alpha`` for FLAG. FLAG weights are computed
once, before the first round, from per-label positive counts that each
client reports; no row-level data reaches the server.
"""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .data import MultiLabelDataset
from .errors import ConfigurationError, DegenerateWeightsError, DimensionError, DivergenceError, IntegrityError
from .metrics import RoundRecord, evaluate_round
from .model import AslConfig, ModelParams, Shape, TrainConfig, init_params, train_local

log = logging.getLogger(__name__)

THREADS_ENV = "FLAGFED_THREADS"
KINDS = ("fedavg", "flag", "local", "central")
DEFAULT_ALPHA = 0.3


@dataclass(frozen=True)
class AggregationStrategy:
    kind: str
    alpha: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown strategy {self.kind!r}; choose from {KINDS}")
        if self.kind == "flag":
            if self.alpha is None or not 0.0 <= self.alpha <= 1.0:
                raise ConfigurationError(f"FLAG alpha must lie in [0, 1], got {self.alpha}")
        elif self.alpha is not None:
            raise ConfigurationError(f"alpha only applies to FLAG, not {self.kind!r}")

    @classmethod
    def fedavg(cls):
        return cls("fedavg")

    @classmethod
    def flag(cls, alpha: float = DEFAULT_ALPHA):
        return cls("flag", float(alpha))

    @classmethod
    def local(cls):
        return cls("local")

    @classmethod
    def central(cls):
        return cls("central")

    @property
    def aggregates(self) -> bool:
        return self.kind in ("fedavg", "flag")

    def __str__(self):
        return f"flag(alpha={self.alpha})" if self.kind == "flag" else self.kind


@dataclass(frozen=True)
class LabelStats:
    """What a client reveals to the server: one positive count per label."""

    client_id: int
    positive_counts: tuple[int, ...]


def label_stats(client_id: int, train: MultiLabelDataset) -> LabelStats:
    counts = train.labels.sum(axis=0, dtype=np.int64)
    return LabelStats(client_id, tuple(int(c) for c in counts))


def label_weight(stats, alpha: float) -> float:
    """``sum over labels of count ** alpha`` with ``0 ** alpha == 0``.

    With ``alpha == 0`` this is the number of labels present; with
    ``alpha == 1`` it is the total positive count.
    """
    counts = stats.positive_counts if isinstance(stats, LabelStats) else stats
    counts = np.asarray(counts, dtype=np.float64)
    if not 0.0 <= alpha <= 1.0:
        raise ConfigurationError(f"alpha must lie in [0, 1], got {alpha}")
    if (counts < 0).any():
        raise IntegrityError("label counts must be non-negative")
    present = counts[counts > 0]
    return float(np.sum(present ** alpha))


def _weighted_mean(client_params, weights) -> ModelParams:
    client_params = list(client_params)
    if not client_params:
        raise ConfigurationError("need at least one client model")
    shape = client_params[0].shape
    if any(p.shape != shape for p in client_params):
        raise DimensionError("client models have different shapes")
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (len(client_params),):
        raise DimensionError(f"{len(client_params)} models but {w.size} weights")
    if (w < 0).any() or not np.isfinite(w).all():
        raise DegenerateWeightsError("weights must be finite and non-negative")
    total = w.sum()
    if total <= 0:
        raise DegenerateWeightsError("all aggregation weights are zero")
    share = w / total
    stack = np.stack([p.values for p in client_params])
    out = np.zeros(shape.size)
    for s, theta in zip(share, stack):
        out += s * theta
    # rounding can leave the convex hull by an ulp
    out = np.clip(out, stack.min(axis=0), stack.max(axis=0))
    return ModelParams(shape, out)


def aggregate_flag(client_params, weights) -> ModelParams:
    return _weighted_mean(client_params, weights)


def aggregate_fedavg(client_params, sample_counts) -> ModelParams:
    return _weighted_mean(client_params, sample_counts)


@dataclass
class FederationState:
    global_params: ModelParams
    client_params: list[ModelParams]
    round: int = 0
    log: list[RoundRecord] = field(default_factory=list)
    client_losses: list[float] = field(default_factory=list)
    has_global: bool = True


def client_seed(seed: int, round_: int, client: int) -> int:
    """Independent training seed for one client in one round."""
    return int(np.random.SeedSequence([seed, round_, client]).generate_state(1, np.uint64)[0])


def resolve_threads(threads=None) -> int:
    if threads is None:
        raw = os.environ.get(THREADS_ENV)
        if raw is None or raw == "":
            return os.cpu_count() or 1
        try:
            threads = int(raw)
        except ValueError:
            raise ConfigurationError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if threads < 0:
        raise ConfigurationError(f"thread count must be >= 0, got {threads}")
    return threads


def run_federation(shards, strategy: AggregationStrategy, rounds: int, tcfg: TrainConfig, acfg: AslConfig,
                   seed: int = 0, hidden: int | None = None, threads: int | None = None, on_round=None):
    """Simulate ``rounds`` communication rounds.

    Returns ``(state, log)``. ``threads`` caps concurrent client training
    (0 runs clients serially; ``None`` reads ``FLAGFED_THREADS``). Results do
    not depend on it. ``on_round(state, record)`` is called after every
    round, e.g. to write checkpoints.
    """
    shards = list(shards)
    if rounds < 1:
        raise ConfigurationError(f"rounds must be >= 1, got {rounds}")
    if strategy.kind == "central":
        if not shards:
            raise ConfigurationError("centralized training needs at least one shard")
    elif len(shards) < 2:
        raise ConfigurationError(f"federation needs at least 2 shards, got {len(shards)}")
    first = shards[0].train
    shape = Shape(first.n_features, first.n_labels, hidden)
    init = init_params(shape, seed)
    n = len(shards)
    state = FederationState(init, [init] * n, has_global=strategy.kind != "local")

    if strategy.kind == "flag":
        stats = [label_stats(s.client_id, s.train) for s in shards]
        weights = [label_weight(st, strategy.alpha) for st in stats]
        log.info("FLAG label weights (alpha=%s): %s", strategy.alpha, weights)
    elif strategy.kind == "fedavg":
        weights = [s.train.n_samples for s in shards]
    else:
        weights = None

    if strategy.kind == "central":
        pooled = MultiLabelDataset.concat([s.train for s in shards])
        jobs = [(0, pooled)]
    else:
        jobs = [(s.client_id, s.train) for s in shards]

    workers = resolve_threads(threads)
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 0 else None
    try:
        for r in range(1, rounds + 1):
            t0 = time.perf_counter()
            if strategy.kind == "local":
                starts = state.client_params
            else:
                starts = [state.global_params] * len(jobs)

            def work(i, r=r, starts=starts):
                cid, train = jobs[i]
                cfg = tcfg.with_seed(client_seed(seed, r, cid))
                try:
                    return train_local(starts[i], train, cfg, acfg)
                except DivergenceError as exc:
                    raise DivergenceError(f"client {cid}, round {r}: {exc}") from exc

            if pool is None:
                results = [work(i) for i in range(len(jobs))]
            else:
                results = list(pool.map(work, range(len(jobs))))

            if strategy.kind == "central":
                params, loss = results[0]
                state.global_params = params
                state.client_params = [params] * n
                state.client_losses = [loss]
            else:
                state.client_params = [p for p, _ in results]
                state.client_losses = [loss for _, loss in results]
                if strategy.kind == "flag":
                    state.global_params = aggregate_flag(state.client_params, weights)
                elif strategy.kind == "fedavg":
                    state.global_params = aggregate_fedavg(state.client_params, weights)
            state.round = r
            record = evaluate_round(state, shards)
            record = replace(record, wall_seconds=time.perf_counter() - t0)
            state.log.append(record)
            log.info("round %d %s: AmAP=%.4f WmAP=%.4f GmAP=%s", r, strategy, record.amap, record.wmap,
                     "n/a" if record.gmap is None else f"{record.gmap:.4f}")
            if on_round is not None:
                on_round(state, record)
    finally:
        if pool is not None:
            pool.shutdown()
    return state, list(state.log)
