"""Routing over time: predict the next traffic matrix, let the model pick
paths, install admissible rules, and fall back to the heuristic when the
model's choices drop too much demand.

Each tick is solved against the full base capacities (rules are recomputed
wholesale, not patched incrementally), so a constant traffic matrix yields
the same rule set every tick.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path as FsPath

import numpy as np

from .flowsolve import (
    RoutingDecision,
    SolverConfig,
    baseline_heuristic,
    decision_from_paths,
)
from .imitation import decode_indices, encode_input, encode_labels, _label_maps
from .neuralnet import Mlp, forward
from .topology import (
    CandidateTable,
    Network,
    NetworkState,
    apply_routing,
    build_candidate_table,
    initial_state,
)
from .traffic import TmSequence, predict_next, tm_to_demands

__all__ = [
    "EngineConfig",
    "ForwardingRule",
    "TickReport",
    "route_tick",
    "run_scenario",
    "compare_with_bh",
    "write_tick_csv",
    "write_compare_csv",
]


@dataclass(frozen=True)
class EngineConfig:
    """window: how many past ticks feed the predictor.
    fallback_threshold: fraction of predicted demand the model may drop
    before the whole tick reverts to the heuristic."""

    window: int = 10
    fallback_threshold: float = 0.10
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self) -> None:
        if self.window < 2:
            raise ValueError("window must be >= 2")
        if not 0 <= self.fallback_threshold <= 1:
            raise ValueError("fallback_threshold must be in [0, 1]")


@dataclass(frozen=True)
class ForwardingRule:
    od: tuple[str, str]
    links: tuple[int, ...]
    rate_bps: float
    install_tick: int

    def __post_init__(self) -> None:
        if self.rate_bps <= 0:
            raise ValueError("a forwarding rule needs a positive rate")
        if not self.links:
            raise ValueError("a forwarding rule needs a non-empty path")


@dataclass
class TickReport:
    tick: int
    n_rules: int
    throughput_bps: float
    total_cost: float
    infer_ms: float
    bh_ms: float | None
    od_fallbacks: int
    whole_tick_fallback: bool
    dropped_fraction: float


def _rules_from_decision(decision: RoutingDecision, tick: int) -> tuple[ForwardingRule, ...]:
    return tuple(
        ForwardingRule(
            od=(r.demand.src, r.demand.dst), links=r.path.links,
            rate_bps=r.rate_bps, install_tick=tick,
        )
        for r in decision.routes
        if r.path is not None and r.rate_bps > 0
    )


def route_tick(
    state: NetworkState,
    window: np.ndarray,
    model: Mlp,
    table: CandidateTable,
    config: EngineConfig,
    tick: int = 0,
) -> tuple[tuple[ForwardingRule, ...], TickReport, NetworkState]:
    """One model-driven routing step.

    Extrapolates the window one tick ahead, runs the model on the encoded
    prediction, assigns rates along the decoded paths (largest demands
    first, clipped to residuals, falling back per OD to later candidates),
    and reverts to the full heuristic when more than the configured demand
    fraction would be dropped. The installed rule set is always admissible
    against `state`; the returned state has it applied.
    """
    net = state.network
    window = np.asarray(window, dtype=np.float64)
    if window.ndim != 3 or window.shape[0] < config.window:
        raise ValueError(
            f"window must stack at least {config.window} traffic matrices")
    tm_pred = predict_next(window[-config.window:])

    t0 = time.perf_counter()
    vec, _scale = encode_input(tm_pred, state)
    out = forward(model, vec)
    idx = decode_indices(out, table.k)
    demands = tm_to_demands(tm_pred, net,
                            min_fraction=config.solver.min_rate_fraction)
    choice = {d.flow_id: int(idx[d.flow_id]) for d in demands}
    decision, dropped = decision_from_paths(net, state, demands, choice, table)
    infer_ms = (time.perf_counter() - t0) * 1000.0

    bh_ms = None
    whole_tick = dropped > config.fallback_threshold
    if whole_tick:
        decision, secs = baseline_heuristic(net, state, tm_pred, config.solver,
                                            table=table)
        bh_ms = secs * 1000.0

    rules = _rules_from_decision(decision, tick)
    report = TickReport(
        tick=tick,
        n_rules=len(rules),
        throughput_bps=decision.throughput_bps,
        total_cost=decision.total_cost,
        infer_ms=infer_ms,
        bh_ms=bh_ms,
        od_fallbacks=sum(1 for r in decision.routes if r.note),
        whole_tick_fallback=whole_tick,
        dropped_fraction=dropped,
    )
    return rules, report, apply_routing(state, decision)


def run_scenario(
    net: Network,
    seq: TmSequence,
    model: Mlp,
    config: EngineConfig,
    table: CandidateTable | None = None,
    max_ticks: int | None = None,
) -> list[TickReport]:
    """Model routing over a whole sequence, one report per routed tick.

    The first `window` ticks only feed the predictor. Every tick starts
    from the full base capacities.
    """
    if table is None:
        table = build_candidate_table(net, config.solver.k_paths)
    w = config.window
    if len(seq) <= w:
        raise ValueError(f"sequence of {len(seq)} ticks is shorter than the "
                         f"prediction window {w}")
    reports = []
    last = len(seq) if max_ticks is None else min(len(seq), w + max_ticks)
    for t in range(w, last):
        state = initial_state(net, timestamp=t)
        _, report, _ = route_tick(state, seq.rates[t - w:t], model, table,
                                  config, tick=t)
        reports.append(report)
    return reports


@dataclass
class CompareRow:
    tick: int
    accuracy: float
    model_throughput_bps: float
    bh_throughput_bps: float
    infer_ms: float
    bh_ms: float
    od_fallbacks: int
    whole_tick_fallback: bool


@dataclass
class CompareSummary:
    n_ticks: int
    accuracy: float
    throughput_ratio: float
    mean_infer_ms: float
    mean_bh_ms: float
    p50_infer_ms: float
    p50_bh_ms: float
    p90_infer_ms: float
    p90_bh_ms: float
    speedup: float
    fallback_ticks: int


def compare_with_bh(
    net: Network,
    seq: TmSequence,
    model: Mlp,
    config: EngineConfig,
    table: CandidateTable | None = None,
    max_ticks: int | None = None,
) -> tuple[list[CompareRow], CompareSummary]:
    """Paired model-vs-heuristic run over a scenario.

    Both sides route the same predicted traffic each tick. Accuracy is the
    fraction of active OD slots where the model picked the heuristic's
    path; the ratio divides model throughput (after clipping and fallback)
    by heuristic throughput.
    """
    if table is None:
        table = build_candidate_table(net, config.solver.k_paths)
    maps = _label_maps(table)
    w = config.window
    if len(seq) <= w:
        raise ValueError(f"sequence of {len(seq)} ticks is shorter than the "
                         f"prediction window {w}")
    rows = []
    last = len(seq) if max_ticks is None else min(len(seq), w + max_ticks)
    for t in range(w, last):
        state = initial_state(net, timestamp=t)
        tm_pred = predict_next(seq.rates[t - w:t])

        t0 = time.perf_counter()
        vec, _ = encode_input(tm_pred, state)
        out = forward(model, vec)
        idx = decode_indices(out, table.k)
        demands = tm_to_demands(tm_pred, net,
                                min_fraction=config.solver.min_rate_fraction)
        choice = {d.flow_id: int(idx[d.flow_id]) for d in demands}
        decision, dropped = decision_from_paths(net, state, demands, choice,
                                                table)
        infer_ms = (time.perf_counter() - t0) * 1000.0

        bh_decision, bh_secs = baseline_heuristic(net, state, tm_pred,
                                                  config.solver, table=table)
        whole_tick = dropped > config.fallback_threshold
        if whole_tick:
            decision = bh_decision

        labels, active = encode_labels(bh_decision, table, maps=maps)
        n_act = int(active.sum())
        acc = (float((idx[active] == labels[active]).sum() / n_act)
               if n_act else 1.0)
        rows.append(CompareRow(
            tick=t,
            accuracy=acc,
            model_throughput_bps=decision.throughput_bps,
            bh_throughput_bps=bh_decision.throughput_bps,
            infer_ms=infer_ms,
            bh_ms=bh_secs * 1000.0,
            od_fallbacks=sum(1 for r in decision.routes if r.note),
            whole_tick_fallback=whole_tick,
        ))
    infer = np.array([r.infer_ms for r in rows])
    bh = np.array([r.bh_ms for r in rows])
    ratios = [
        r.model_throughput_bps / r.bh_throughput_bps
        for r in rows if r.bh_throughput_bps > 0
    ]
    summary = CompareSummary(
        n_ticks=len(rows),
        accuracy=float(np.mean([r.accuracy for r in rows])),
        throughput_ratio=float(np.mean(ratios)) if ratios else 1.0,
        mean_infer_ms=float(infer.mean()),
        mean_bh_ms=float(bh.mean()),
        p50_infer_ms=float(np.percentile(infer, 50)),
        p50_bh_ms=float(np.percentile(bh, 50)),
        p90_infer_ms=float(np.percentile(infer, 90)),
        p90_bh_ms=float(np.percentile(bh, 90)),
        speedup=float(bh.mean() / infer.mean()) if infer.mean() > 0 else 0.0,
        fallback_ticks=sum(1 for r in rows if r.whole_tick_fallback),
    )
    return rows, summary


def write_tick_csv(reports: list[TickReport], path: str | FsPath) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tick", "throughput_bps", "cost", "infer_ms", "bh_ms",
                    "fallbacks", "whole_tick_fallback", "dropped_fraction",
                    "n_rules"])
        for r in reports:
            w.writerow([
                r.tick, repr(float(r.throughput_bps)), repr(float(r.total_cost)),
                repr(float(r.infer_ms)),
                "" if r.bh_ms is None else repr(float(r.bh_ms)),
                r.od_fallbacks, int(r.whole_tick_fallback),
                repr(float(r.dropped_fraction)), r.n_rules,
            ])


def write_compare_csv(rows: list[CompareRow], path: str | FsPath) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tick", "accuracy", "model_throughput_bps",
                    "bh_throughput_bps", "infer_ms", "bh_ms", "od_fallbacks",
                    "whole_tick_fallback"])
        for r in rows:
            w.writerow([
                r.tick, repr(float(r.accuracy)),
                repr(float(r.model_throughput_bps)),
                repr(float(r.bh_throughput_bps)),
                repr(float(r.infer_ms)), repr(float(r.bh_ms)),
                r.od_fallbacks, int(r.whole_tick_fallback),
            ])
