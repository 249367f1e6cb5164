"""Average precision, per-client/global mAP summaries and rounds-to-target."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DimensionError, UndefinedMetricError
from .model import forward

NEVER = "never"


def average_precision(scores, targets) -> float:
    """Mean of precision-at-rank over the positive items.

    Items are ranked by descending score; equal scores keep their original
    order. Raises ``UndefinedMetricError`` when there is no positive.
    """
    scores = np.asarray(scores, dtype=np.float64)
    targets = np.asarray(targets)
    if scores.shape != targets.shape or scores.ndim != 1:
        raise DimensionError(f"scores {scores.shape} and targets {targets.shape} must be equal-length vectors")
    hits = targets[np.argsort(-scores, kind="stable")] == 1
    n_pos = int(hits.sum())
    if n_pos == 0:
        raise UndefinedMetricError("average precision is undefined without a positive target")
    ranks = np.flatnonzero(hits) + 1
    precision = np.arange(1, n_pos + 1) / ranks
    # fsum is correctly rounded, so the result does not depend on summation order
    return math.fsum(precision.tolist()) / n_pos


def per_label_ap(probs, targets) -> np.ndarray:
    """AP per label, NaN for labels with no positive target."""
    probs = np.asarray(probs, dtype=np.float64)
    targets = np.asarray(targets)
    if probs.shape != targets.shape or probs.ndim != 2:
        raise DimensionError(f"probs {probs.shape} and targets {targets.shape} must be equal M x L matrices")
    out = np.full(probs.shape[1], np.nan)
    for j in range(probs.shape[1]):
        if targets[:, j].any():
            out[j] = average_precision(probs[:, j], targets[:, j])
    return out


def mean_average_precision(probs, targets) -> float:
    ap = per_label_ap(probs, targets)
    if np.isnan(ap).all():
        raise UndefinedMetricError("no label has a positive target")
    return float(np.nanmean(ap))


@dataclass(frozen=True)
class RoundRecord:
    round: int
    per_client_map: tuple[float, ...]
    global_map_per_client: tuple[float, ...] | None
    mean_train_loss: float
    client_losses: tuple[float, ...] = ()
    wall_seconds: float = 0.0

    def __post_init__(self):
        values = list(self.per_client_map) + list(self.global_map_per_client or ())
        if any(not 0.0 <= v <= 1.0 for v in values):
            raise ConfigurationError(f"mAP values must lie in [0, 1] (round {self.round})")

    @property
    def amap(self) -> float:
        return float(np.mean(self.per_client_map))

    @property
    def wmap(self) -> float:
        return float(np.min(self.per_client_map))

    @property
    def gmap(self) -> float | None:
        if self.global_map_per_client is None:
            return None
        return float(np.mean(self.global_map_per_client))


def _shard_map(params, shard):
    try:
        return mean_average_precision(forward(params, shard.val.features), shard.val.labels)
    except UndefinedMetricError:
        raise UndefinedMetricError(f"client {shard.client_id}: validation shard has no positive label") from None


def evaluate_round(state, shards) -> RoundRecord:
    """Score each client's current params and the global params on every
    client's validation shard.

    The returned record carries the round number and losses stored on
    ``state``; ``global_map_per_client`` is ``None`` when the state has no
    meaningful global model (local-only training).
    """
    per_client = tuple(_shard_map(p, s) for p, s in zip(state.client_params, shards))
    if state.has_global:
        global_maps = tuple(_shard_map(state.global_params, s) for s in shards)
    else:
        global_maps = None
    losses = tuple(state.client_losses)
    return RoundRecord(
        round=state.round,
        per_client_map=per_client,
        global_map_per_client=global_maps,
        mean_train_loss=float(np.mean(losses)) if losses else float("nan"),
        client_losses=losses,
    )


@dataclass(frozen=True)
class ConvergenceResult:
    target_map: float
    rounds_to_target: int | str
    epochs_to_target: int | str
    best_map: float
    best_round: int

    def to_json(self):
        return {
            "target_map": self.target_map,
            "rounds_to_target": self.rounds_to_target,
            "epochs_to_target": self.epochs_to_target,
            "best_map": self.best_map,
            "best_round": self.best_round,
        }


def convergence(log, target_fraction: float, centralized_map: float, local_epochs: int) -> ConvergenceResult:
    """First round whose AmAP reaches ``target_fraction * centralized_map``.

    When the target is never reached the round fields are ``"never"`` and
    ``best_round``/``best_map`` locate the best AmAP instead.
    """
    log = list(log)
    if not log:
        raise ConfigurationError("convergence needs a non-empty round log")
    if not 0 < target_fraction <= 1:
        raise ConfigurationError(f"target_fraction must lie in (0, 1], got {target_fraction}")
    target = target_fraction * centralized_map
    amaps = [rec.amap for rec in log]
    best = int(np.argmax(amaps))
    reached = next((rec.round for rec, a in zip(log, amaps) if a >= target), None)
    return ConvergenceResult(
        target_map=target,
        rounds_to_target=NEVER if reached is None else reached,
        epochs_to_target=NEVER if reached is None else reached * local_epochs,
        best_map=amaps[best],
        best_round=log[best].round,
    )
