"""Successive halving with and without FedPop on top."""

import numpy as np

from fedpop import EvoParams, FedPopParams, ShaParams, TuningBudget, run_tuning
from fedpop import Architecture, PartitionSpec, default_search_space, generate_synthetic, init_weights, partition
from fedpop.tuners import count_tried_vectors, sha_consumed_rounds, sha_schedule

budget = TuningBudget(total_rounds=400, rounds_per_config=80, num_configs=27, active_clients=5)
rungs = sha_schedule(budget, ShaParams(eta=3, num_rungs=3))
print("rungs:", rungs, "rounds used:", sha_consumed_rounds(27, 3, rungs, 80), "of", budget.total_rounds)

rng = np.random.default_rng(2)
data = generate_synthetic(2000, 20, 10, 2.0, rng)
shards = partition(data, PartitionSpec("dirichlet", 20, 0.5), rng)
w0 = init_weights(Architecture("logreg", 20, 10), rng)
space = default_search_space()

plain = run_tuning("sha", space, budget, shards, w0, seed=2)
alive = np.bincount([t.round for t in plain.traces])[1:]
print("live processes at rounds 1, after each rung:", [int(alive[0])] + [int(alive[r]) for r in rungs])
print("tried (alpha, beta):", count_tried_vectors(plain.traces))

fedpop = FedPopParams(EvoParams(0.1, 0.1, 80), global_interval=4, quantile_coef=3)
boosted = run_tuning("sha", space, budget, shards, w0, seed=2, fedpop=fedpop)
print("with FedPop, tried (alpha, beta):", count_tried_vectors(boosted.traces))
