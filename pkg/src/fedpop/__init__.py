"""Federated learning simulator with population-based hyperparameter tuning."""

from .data import ClientShard, Dataset, PartitionSpec, generate_synthetic, load_csv, partition
from .evo import EvoParams, anneal, evo, perturb_value
from .fl_engine import (
    Architecture,
    ClientHPs,
    ModelWeights,
    ServerHPs,
    ServerOptState,
    agg,
    fed_opt_round,
    init_weights,
    loc,
    val,
)
from .hp_space import (
    ContinuousUniform,
    DiscreteOrdered,
    HPVector,
    HyperparamSpec,
    SearchSpace,
    default_search_space,
    distance,
    sample,
    sample_in_ball,
)
from .tuners import (
    FedPopParams,
    ShaParams,
    TuningBudget,
    count_tried_vectors,
    fedpop_g,
    fedpop_l,
    run_tuning,
)

__version__ = "0.1.0"
