"""Population constructors (RS, SHA) and the FedPop evolutionary tuner.

Scores are validation losses throughout: smaller is better. Every random
decision draws from a stream keyed by ``(seed, purpose, process, round,
client)`` so results do not depend on execution order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .data import ClientShard
from .evaluation import evaluate_global
from .evo import EvoParams, anneal, evo
from .fl_engine import (
    ClientHPs,
    ModelWeights,
    ServerHPs,
    ServerOptState,
    fed_opt_round,
)
from .hp_space import HPVector, SearchSpace, clip_to_ball, sample, sample_in_ball

__all__ = [
    "BudgetMismatch",
    "InfeasibleSchedule",
    "TuningBudget",
    "FedPopParams",
    "ShaParams",
    "TuningProcess",
    "RoundTrace",
    "TuningResult",
    "Streams",
    "quantile_sets",
    "windowed_score",
    "construct_population_rs",
    "construct_population_sha",
    "sha_schedule",
    "sha_consumed_rounds",
    "fedpop_l",
    "fedpop_g",
    "run_tuning",
    "count_tried_vectors",
]


class BudgetMismatch(ValueError):
    pass


class InfeasibleSchedule(ValueError):
    pass


@dataclass(frozen=True)
class TuningBudget:
    total_rounds: int
    rounds_per_config: int
    num_configs: int
    active_clients: int

    def __post_init__(self) -> None:
        for name in ("total_rounds", "rounds_per_config", "num_configs", "active_clients"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be a positive integer")


@dataclass(frozen=True)
class FedPopParams:
    evo: EvoParams
    global_interval: int
    quantile_coef: int = 3
    decay_power: float = 1.0
    use_local: bool = True
    use_global: bool = True

    def __post_init__(self) -> None:
        if self.quantile_coef < 2:
            raise ValueError("quantile_coef must be >= 2")
        if self.global_interval < 1:
            raise ValueError("global_interval must be >= 1")
        if self.decay_power <= 0:
            raise ValueError("decay_power must be > 0")


@dataclass(frozen=True)
class ShaParams:
    eta: int = 3
    num_rungs: int = 3
    # Cumulative rounds at which elimination happens; solved when omitted.
    rungs: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        if self.eta < 2:
            raise ValueError("eta must be >= 2")
        if self.num_rungs < 1:
            raise ValueError("num_rungs must be >= 1")
        if self.rungs is not None:
            object.__setattr__(self, "rungs", tuple(int(r) for r in self.rungs))
            if len(self.rungs) != self.num_rungs:
                raise ValueError("len(rungs) must equal num_rungs")


@dataclass
class TuningProcess:
    pid: int
    alpha: HPVector
    alpha_id: int
    beta0: HPVector
    beta0_id: int
    weights: ModelWeights
    server_state: ServerOptState
    betas: list[HPVector] = field(default_factory=list)
    beta_ids: list[int] = field(default_factory=list)
    score_history: list[tuple[int, float]] = field(default_factory=list)


@dataclass(frozen=True)
class RoundTrace:
    round: int
    process_id: int
    client_ids: tuple[int, ...]
    client_scores: tuple[float, ...]
    score: float
    alpha: HPVector
    beta0: HPVector
    alpha_id: int
    beta_ids: tuple[int, ...]
    events: tuple[str, ...] = ()
    global_accuracy: float | None = None


@dataclass
class TuningResult:
    processes: list[TuningProcess]
    traces: list[RoundTrace]
    best: TuningProcess
    rungs: tuple[int, ...] = ()


_PURPOSES = {
    "construct": 1,
    "clients": 2,
    "loc": 3,
    "ball": 4,
    "fedpop_l": 5,
    "fedpop_g": 6,
    "finetune": 7,
    "data": 8,
    "partition": 9,
    "init": 10,
}


class Streams:
    """Independent generators keyed by purpose, process, round and client."""

    def __init__(self, seed: int):
        self.seed = int(seed)

    def rng(self, purpose: str, pid: int = 0, round: int = 0, client: int = 0) -> np.random.Generator:
        key = (_PURPOSES[purpose], int(pid), int(round), int(client))
        return np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=key))


class _Ids:
    def __init__(self) -> None:
        self._next = 0

    def __call__(self) -> int:
        self._next += 1
        return self._next - 1


def quantile_sets(scores: Sequence[float], rho: int) -> tuple[list[int], list[int]]:
    """Indices to replace (bottom) and donor indices (top), both ascending.

    With ``m = len(scores) // rho``, the top set holds every index scoring at
    or below the m-th smallest score and the bottom set every index at or
    above the m-th largest. Indices in both (ties spanning the whole range)
    are dropped from the bottom set, so nothing replaces itself; all-equal
    scores therefore yield no replacement.
    """
    n = len(scores)
    m = n // rho
    if m == 0:
        return [], []
    order = sorted(range(n), key=lambda i: (scores[i], i))
    lo = scores[order[m - 1]]
    hi = scores[order[n - m]]
    top = [i for i in range(n) if scores[i] <= lo]
    bottom = [i for i in range(n) if scores[i] >= hi and not scores[i] <= lo]
    return bottom, top


def windowed_score(history: Sequence[float], window: int, decay_power: float = 1.0) -> float:
    """Power-law weighted mean of the last ``window`` scores, newest heaviest.

    The score of age ``a`` (0 = newest) gets weight ``(a + 1) ** -decay_power``.
    """
    recent = list(history)[-window:][::-1]
    if not recent:
        return math.inf
    w = (np.arange(len(recent)) + 1.0) ** -decay_power
    s = np.asarray(recent, dtype=float)
    if np.any(np.isinf(s)):
        return math.inf
    return float(np.dot(w, s) / w.sum())


def _new_process(pid, space, w0, rng, ids) -> TuningProcess:
    alpha = sample(space.server_specs, rng)
    beta0 = sample(space.client_specs, rng)
    return TuningProcess(
        pid=pid,
        alpha=alpha,
        alpha_id=ids(),
        beta0=beta0,
        beta0_id=ids(),
        weights=w0,
        server_state=ServerOptState.zeros(w0.arch.dim),
    )


def construct_population_rs(
    space: SearchSpace,
    budget: TuningBudget,
    w0: ModelWeights,
    streams: Streams,
    ids: _Ids | None = None,
) -> list[TuningProcess]:
    """``total_rounds / rounds_per_config`` independently sampled processes sharing ``w0``."""
    if budget.total_rounds != budget.num_configs * budget.rounds_per_config:
        raise BudgetMismatch(
            f"RS needs total_rounds == num_configs * rounds_per_config, got "
            f"{budget.total_rounds} != {budget.num_configs} * {budget.rounds_per_config}"
        )
    ids = ids or _Ids()
    return [_new_process(i, space, w0, streams.rng("construct", i), ids) for i in range(budget.num_configs)]


def sha_consumed_rounds(num_configs: int, eta: int, rungs: Sequence[int], rounds_per_config: int) -> int:
    """Total fed-opt rounds consumed by a successive-halving schedule."""
    total, prev, alive = 0, 0, num_configs
    for r in rungs:
        total += alive * (r - prev)
        prev, alive = r, alive // eta
    return total + alive * (rounds_per_config - prev)


def sha_schedule(budget: TuningBudget, params: ShaParams) -> tuple[int, ...]:
    """Rung rounds for SHA.

    Explicit rungs are validated. Otherwise rungs grow geometrically by
    ``eta`` (``r, eta*r, eta^2*r, ...``) with the largest first rung that
    keeps the total within ``total_rounds``.
    """
    n0 = params.eta ** params.num_rungs
    if params.rungs is not None:
        rungs = params.rungs
        if any(b <= a for a, b in zip((0,) + rungs, rungs)) or rungs[-1] >= budget.rounds_per_config:
            raise InfeasibleSchedule(f"rungs {rungs} must increase strictly and end before {budget.rounds_per_config}")
        used = sha_consumed_rounds(n0, params.eta, rungs, budget.rounds_per_config)
        if used > budget.total_rounds:
            raise InfeasibleSchedule(f"schedule {rungs} consumes {used} > {budget.total_rounds} rounds")
        return rungs
    best = None
    first = 1
    while True:
        rungs = tuple(first * params.eta ** j for j in range(params.num_rungs))
        if rungs[-1] >= budget.rounds_per_config:
            break
        if sha_consumed_rounds(n0, params.eta, rungs, budget.rounds_per_config) > budget.total_rounds:
            break
        best = rungs
        first += 1
    if best is None:
        raise InfeasibleSchedule(
            f"no geometric schedule with eta={params.eta}, {params.num_rungs} rungs fits "
            f"total_rounds={budget.total_rounds}, rounds_per_config={budget.rounds_per_config}"
        )
    return best


def construct_population_sha(
    space: SearchSpace,
    budget: TuningBudget,
    params: ShaParams,
    w0: ModelWeights,
    streams: Streams,
    ids: _Ids | None = None,
) -> tuple[list[TuningProcess], tuple[int, ...]]:
    """``eta ** num_rungs`` sampled processes and their rung schedule."""
    n0 = params.eta ** params.num_rungs
    if budget.num_configs != n0:
        raise BudgetMismatch(f"SHA with eta={params.eta}, {params.num_rungs} rungs starts {n0} configs, budget says {budget.num_configs}")
    rungs = sha_schedule(budget, params)
    ids = ids or _Ids()
    procs = [_new_process(i, space, w0, streams.rng("construct", i), ids) for i in range(n0)]
    return procs, rungs


def fedpop_l(
    betas: Sequence[HPVector],
    scores: Sequence[float],
    rho: int,
    epsilon: float,
    p_re: float,
    center: HPVector,
    rng: np.random.Generator,
) -> tuple[list[HPVector], list[int]]:
    """Replace the worst client HP-vectors with perturbed copies of the best.

    Returns the new list and the replaced indices. Offspring are clipped back
    into the Δ-ball of ``center``.
    """
    if len(betas) != len(scores):
        raise ValueError("one score per HP-vector required")
    bottom, top = quantile_sets(scores, rho)
    out = list(betas)
    for kb in bottom:
        kt = top[int(rng.integers(len(top)))]
        out[kb] = clip_to_ball(evo(betas[kt], epsilon, p_re, rng), center)
    return out, bottom


def fedpop_g(
    processes: Sequence[TuningProcess],
    measurements: Sequence[float],
    rho: int,
    epsilon: float,
    p_re: float,
    rng: np.random.Generator,
    ids: _Ids | None = None,
) -> tuple[list[TuningProcess], list[tuple[int, int]]]:
    """Replace the worst processes with perturbed copies of the best.

    A replaced process takes Evo'd ``(alpha, beta0)`` from its donor, the
    donor's weights and server state, and an empty ``betas`` list so its next
    round resamples the Δ-ball. Returns the new list and ``(replaced, donor)``
    position pairs.
    """
    ids = ids or _Ids()
    bottom, top = quantile_sets(measurements, rho)
    out = list(processes)
    pairs = []
    for ib in bottom:
        it = top[int(rng.integers(len(top)))]
        donor = processes[it]
        alpha = evo(donor.alpha, epsilon, p_re, rng)
        beta0 = evo(donor.beta0, epsilon, p_re, rng)
        out[ib] = replace(
            processes[ib],
            alpha=alpha,
            alpha_id=ids(),
            beta0=beta0,
            beta0_id=ids(),
            weights=donor.weights,
            server_state=donor.server_state,
            betas=[],
            beta_ids=[],
            score_history=list(processes[ib].score_history),
        )
        pairs.append((ib, it))
    return out, pairs


def run_tuning(
    constructor: str,
    space: SearchSpace,
    budget: TuningBudget,
    shards: Sequence[ClientShard],
    w0: ModelWeights,
    seed: int,
    fedpop: FedPopParams | None = None,
    sha: ShaParams | None = None,
    selection_window: int = 1,
    eval_interval: int = 0,
    weight_by_examples: bool = False,
) -> TuningResult:
    """Run a population constructor, optionally with FedPop on top.

    Each round every live process samples its Δ-ball when its client
    HP-vectors are empty, runs one fed-opt round on the shared active
    clients, applies FedPop-L and records its mean client score. SHA rungs
    eliminate, then every ``global_interval`` rounds FedPop-G runs over the
    live processes. Client HP-vectors are drawn from the Δ-ball only while
    FedPop-L can act (``active_clients // quantile_coef >= 1``); otherwise
    every client trains with ``beta0``, matching the bare constructor.
    """
    streams = Streams(seed)
    ids = _Ids()
    K = budget.active_clients
    if K > len(shards):
        raise BudgetMismatch(f"{K} active clients requested, only {len(shards)} shards")
    rounds = budget.rounds_per_config
    rungs: tuple[int, ...] = ()
    sha = sha or ShaParams()
    if constructor == "rs":
        procs = construct_population_rs(space, budget, w0, streams, ids)
    elif constructor == "sha":
        procs, rungs = construct_population_sha(space, budget, sha, w0, streams, ids)
    else:
        raise ValueError(f"unknown population constructor {constructor!r}")

    rho = fedpop.quantile_coef if fedpop else 0
    use_ball = fedpop is not None and fedpop.use_local and K // rho >= 1
    use_global = fedpop is not None and fedpop.use_global
    evo_params = fedpop.evo if fedpop else None
    rung_set = set(rungs)
    alive = list(procs)
    traces: list[RoundTrace] = []

    for r in range(1, rounds + 1):
        clients = np.sort(streams.rng("clients", round=r).choice(len(shards), size=K, replace=False))
        active = [shards[c] for c in clients]
        eps, p_re = anneal(evo_params, r - 1) if evo_params else (0.0, 0.0)
        rows: dict[int, dict] = {}
        for p in alive:
            events = []
            if use_ball and not p.betas:
                ball_rng = streams.rng("ball", p.pid, r)
                p.betas = [sample_in_ball(p.beta0, ball_rng) for _ in range(K)]
                p.beta_ids = [ids() for _ in range(K)]
                events.append("resampled_ball")
            if use_ball:
                used, used_ids = p.betas, p.beta_ids
            else:
                used, used_ids = [p.beta0] * K, [p.beta0_id] * K
            res = fed_opt_round(
                ServerHPs.decode(p.alpha, rounds),
                [ClientHPs.decode(b) for b in used],
                p.weights,
                active,
                p.server_state,
                [streams.rng("loc", p.pid, r, c) for c in clients],
                weight_by_examples,
            )
            if res.diverged:
                events.append("client_diverged")
            if res.agg_rejected:
                events.append("agg_rejected")
            if use_ball:
                new_betas, replaced = fedpop_l(
                    p.betas, res.scores, rho, eps, p_re, p.beta0, streams.rng("fedpop_l", p.pid, r)
                )
                if replaced:
                    p.betas = new_betas
                    for k in replaced:
                        p.beta_ids[k] = ids()
                    events.append("fedpop_l_replaced")
            p.weights, p.server_state = res.weights, res.state
            s_i = float(np.mean(res.scores))
            p.score_history.append((r, s_i))
            acc = None
            if eval_interval and r % eval_interval == 0:
                acc = evaluate_global(p.weights, shards)[0]
            rows[p.pid] = dict(
                round=r,
                process_id=p.pid,
                client_ids=tuple(int(c) for c in clients),
                client_scores=tuple(res.scores),
                score=s_i,
                alpha=p.alpha,
                beta0=p.beta0,
                alpha_id=p.alpha_id,
                beta_ids=tuple(used_ids),
                events=events,
                global_accuracy=acc,
            )

        if r in rung_set:
            scores = [p.score_history[-1][1] for p in alive]
            keep = len(alive) // sha.eta
            order = sorted(range(len(alive)), key=lambda i: (scores[i], alive[i].pid))
            survivors = sorted(order[:keep])
            for i in order[keep:]:
                rows[alive[i].pid]["events"].append("sha_eliminated")
            alive = [alive[i] for i in survivors]

        if use_global and r % fedpop.global_interval == 0:
            measures = [
                windowed_score([s for _, s in p.score_history], fedpop.global_interval, fedpop.decay_power)
                for p in alive
            ]
            alive, pairs = fedpop_g(alive, measures, rho, eps, p_re, streams.rng("fedpop_g", round=r), ids)
            for ib, _ in pairs:
                rows[alive[ib].pid]["events"].append("fedpop_g_replaced")

        for pid in sorted(rows):
            row = rows[pid]
            row["events"] = tuple(row["events"])
            traces.append(RoundTrace(**row))

    decay = fedpop.decay_power if fedpop else 1.0
    final = [windowed_score([s for _, s in p.score_history], selection_window, decay) for p in alive]
    best = alive[min(range(len(alive)), key=lambda i: (final[i], alive[i].pid))]
    return TuningResult(alive, traces, best, rungs)


def count_tried_vectors(traces: Sequence[RoundTrace]) -> tuple[int, int]:
    """Distinct server / client HP-vectors that were actually trained with."""
    alphas = {t.alpha_id for t in traces}
    betas = {b for t in traces for b in t.beta_ids}
    return len(alphas), len(betas)
