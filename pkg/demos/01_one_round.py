"""A single federated round, step by step.

Builds a small label-skewed task, runs local training on a few clients,
scores each local model on its client's validation split and aggregates.
"""

import numpy as np

from fedpop import (
    Architecture,
    ClientHPs,
    PartitionSpec,
    ServerHPs,
    ServerOptState,
    fed_opt_round,
    generate_synthetic,
    init_weights,
    partition,
)
from fedpop.evaluation import evaluate_global

rng = np.random.default_rng(0)
data = generate_synthetic(1000, num_features=8, num_classes=4, class_separation=2.0, rng=rng)
shards = partition(data, PartitionSpec("dirichlet", num_clients=10, concentration=0.5), rng)
print("train sizes per client:", [len(s.train) for s in shards])

arch = Architecture("mlp", 8, 4, hidden_width=16)
w = init_weights(arch, rng)
state = ServerOptState.zeros(arch.dim)
print(f"untrained global accuracy: {evaluate_global(w, shards)[0]:.3f}")

# FedAvg is the server optimizer with lr 1 and no momentum.
fedavg = ServerHPs(learning_rate=1.0, momentum=0.0)
local = ClientHPs(learning_rate=0.1, local_epochs=2, batch_size=16)

for r in range(1, 31):
    active = np.sort(rng.choice(len(shards), size=4, replace=False))
    res = fed_opt_round(fedavg, [local] * 4, w, [shards[k] for k in active], state,
                        [np.random.default_rng([r, k]) for k in active])
    w, state = res.weights, res.state
    if r % 10 == 0:
        acc, loss = evaluate_global(w, shards)
        print(f"round {r:2d}  mean client val loss {np.mean(res.scores):.3f}  global acc {acc:.3f}")

# A client whose training blows up scores +inf and is left out of the mean.
bad = ClientHPs(learning_rate=1e3, weight_decay=1.0, local_epochs=50)
res = fed_opt_round(fedavg, [local, bad], w, shards[:2], state, [np.random.default_rng(k) for k in (1, 2)])
print("scores with one diverging client:", res.scores, "diverged:", res.diverged)
