"""Random search against FedPop on the desk task, seed by seed.

Takes about a minute on one core.
"""

import numpy as np

from fedpop.harness import load_config, run_experiment

base = load_config("configs/desk_fedpop_rs.json")
variants = {
    "random search": {"tuner.method": "rs"},
    "FedPop(RS)": {},
    "global step only": {"tuner.fedpop.use_local": False},
    "local step only": {"tuner.fedpop.use_global": False},
}

for label, overrides in variants.items():
    report = run_experiment(base.with_overrides(**overrides))
    accs = np.array([s.global_accuracy for s in report.seeds]) * 100
    betas = [s.num_beta for s in report.seeds]
    print(f"{label:<17} {accs.mean():6.2f} +- {accs.std(ddof=1):4.2f}   "
          f"per seed {np.round(accs, 1).tolist()}   client vectors tried {min(betas)}..{max(betas)}")
