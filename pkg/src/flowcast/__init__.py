"""Learned dynamic routing: heuristic solver, imitation model, engine."""

from .topology import (
    CandidateTable,
    Link,
    Network,
    NetworkState,
    Path,
    TopologyError,
    build_candidate_table,
    builtin_topology,
    initial_state,
    load_topology,
    apply_routing,
)
from .traffic import (
    FlowDemand,
    TmSequence,
    TrafficError,
    TrafficParams,
    generate_tm_sequence,
    load_tm_csv,
    predict_next,
    save_tm_csv,
    tm_to_demands,
)
from .flowsolve import (
    AdmissibilityReport,
    FlowRoute,
    FractionalFlow,
    InfeasibleDemandError,
    OracleIntractableError,
    RoutingDecision,
    SolveError,
    SolverConfig,
    baseline_heuristic,
    check_admissible,
    decision_from_paths,
    fractional_max_throughput,
    fractional_min_cost,
    select_unsplittable,
    solve_exact_oracle,
)
from .neuralnet import (
    Mlp,
    TrainConfig,
    forward,
    init_mlp,
    load_model,
    save_model,
    train,
)
from .imitation import (
    Dataset,
    EvalMetrics,
    Sample,
    dataset_hash,
    decode_paths,
    encode_input,
    encode_labels,
    evaluate_model,
    generate_dataset,
    load_dataset,
    save_dataset,
)
from .engine import (
    CompareSummary,
    EngineConfig,
    ForwardingRule,
    TickReport,
    compare_with_bh,
    route_tick,
    run_scenario,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # topology
    "CandidateTable", "Link", "Network", "NetworkState", "Path",
    "TopologyError", "build_candidate_table", "builtin_topology",
    "initial_state", "load_topology", "apply_routing",
    # traffic
    "FlowDemand", "TmSequence", "TrafficError", "TrafficParams",
    "generate_tm_sequence", "load_tm_csv", "predict_next", "save_tm_csv",
    "tm_to_demands",
    # solver
    "AdmissibilityReport", "FlowRoute", "FractionalFlow",
    "InfeasibleDemandError", "OracleIntractableError", "RoutingDecision",
    "SolveError", "SolverConfig", "baseline_heuristic", "check_admissible",
    "decision_from_paths", "fractional_max_throughput", "fractional_min_cost",
    "select_unsplittable", "solve_exact_oracle",
    # model
    "Mlp", "TrainConfig", "forward", "init_mlp", "load_model", "save_model",
    "train",
    # imitation
    "Dataset", "EvalMetrics", "Sample", "dataset_hash", "decode_paths",
    "encode_input", "encode_labels", "evaluate_model", "generate_dataset",
    "load_dataset", "save_dataset",
    # engine
    "CompareSummary", "EngineConfig", "ForwardingRule", "TickReport",
    "compare_with_bh", "route_tick", "run_scenario",
]
