"""Global and locally finetuned evaluation over client test splits."""

from __future__ import annotations

import logging
from typing import Sequence

import numpy as np

from .data import ClientShard
from .fl_engine import ClientHPs, ModelWeights, NonFiniteLoss, accuracy, loc, val
from .hp_space import HPVector

log = logging.getLogger(__name__)

__all__ = ["evaluate_global", "evaluate_finetuned"]


def _weighted(results: Sequence[tuple[float, float, int]]) -> tuple[float, float]:
    if not results:
        return float("nan"), float("nan")
    n = np.array([r[2] for r in results], dtype=float)
    acc = float(np.dot([r[0] for r in results], n) / n.sum())
    loss = float(np.dot([r[1] for r in results], n) / n.sum())
    return acc, loss


def evaluate_global(w: ModelWeights, shards: Sequence[ClientShard]) -> tuple[float, float]:
    """Example-weighted accuracy and cross-entropy over every client's test split."""
    return _weighted([(accuracy(w, s.test), val(w, s.test), len(s.test)) for s in shards])


def evaluate_finetuned(
    w: ModelWeights,
    beta0: HPVector,
    shards: Sequence[ClientShard],
    rngs: Sequence[np.random.Generator],
) -> tuple[float, float, int]:
    """Run one local pass with ``beta0`` per client, then test each client model.

    Returns ``(accuracy, loss, num_diverged)``; diverged clients are left out
    of the average.
    """
    hps = ClientHPs.decode(beta0)
    results, diverged = [], 0
    for shard, rng in zip(shards, rngs):
        try:
            wk = loc(hps, w, shard.train, rng)
        except NonFiniteLoss:
            diverged += 1
            continue
        results.append((accuracy(wk, shard.test), val(wk, shard.test), len(shard.test)))
    if diverged:
        log.warning("%d of %d clients diverged during finetuning", diverged, len(shards))
    acc, loss = _weighted(results)
    return acc, loss, diverged
