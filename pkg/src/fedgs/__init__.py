"""Group-synchronized federated learning with distribution-aligned selection."""

__version__ = "0.1.0"

from .core import (
    ClassCounts,
    ClassDistribution,
    FederationTopology,
    divergence,
    estimate_global_distribution,
    normalize,
)
from .datagen import (
    DeviceStream,
    SynthConfig,
    SynthFederation,
    fetch_batch,
    generate_federation,
    load_manifest,
    peek_next_histogram,
    save_manifest,
)
from .learn import (
    Batch,
    ModelParams,
    ModelSpec,
    evaluate,
    external_sync,
    fedavg_round,
    init_params,
    internal_sync,
    load_params,
    local_step,
    loss_and_grad,
    save_params,
)
from .samplers import (
    SamplerResult,
    bench_samplers,
    planted_problem,
    random_problem,
    sample_brute,
    sample_genetic,
    sample_monte_carlo,
    sample_random,
)
from .selection import (
    SelectionProblem,
    SelectionSolution,
    SolverTrace,
    build_problem,
    gbp_cs,
    gradient,
    init_mpinv,
    init_random,
    init_zero,
    load_problem,
    objective,
    save_problem,
    select_permutation_pair,
    selection_divergence,
)
from .sim import (
    RoundMetrics,
    RunResult,
    SimConfig,
    divergence_probe,
    run_fedavg,
    run_fedgs,
)
from .timecost import (
    CostParams,
    CostReport,
    EfficiencyReport,
    comm_ext,
    comm_int,
    cost_report,
    efficiency_condition,
    fedavg_round_time,
    fedgs_round_time,
    total_fedavg,
    total_fedgs,
)
