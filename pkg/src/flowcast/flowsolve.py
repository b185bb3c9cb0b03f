"""Unsplittable flow routing: admissibility, exact oracle, and the
approximate max-throughput / min-cost / path-selection pipeline.

The pipeline (`baseline_heuristic`) works over per-OD candidate path sets:

1. `fractional_max_throughput` packs rate fractionally onto candidates with
   a multiplicative-weights scheme, rescales to exact feasibility, then tops
   flows up greedily wherever residual capacity is left. On instances small
   enough for the exact oracle the result lands within (1 - epsilon) of the
   optimum over the same candidate sets.
2. `fractional_min_cost` shifts rate from expensive candidates to strictly
   cheaper ones at unchanged per-flow throughput.
3. `select_unsplittable` commits each flow to a single path.

All three stages are pure functions of their inputs; every output passes
`check_admissible` against the state it was solved for.
"""

from __future__ import annotations

import csv
import itertools
import math
import time
from dataclasses import dataclass, field
from pathlib import Path as FsPath

import numpy as np

from . import _kernels
from .topology import (
    CandidateTable,
    Network,
    NetworkState,
    Path,
    build_candidate_table,
)
from .traffic import FlowDemand, tm_to_demands

__all__ = [
    "SolveError",
    "InfeasibleDemandError",
    "OracleIntractableError",
    "SolverConfig",
    "Violation",
    "AdmissibilityReport",
    "FractionalFlow",
    "FlowRoute",
    "RoutingDecision",
    "check_admissible",
    "solve_exact_oracle",
    "fractional_max_throughput",
    "fractional_min_cost",
    "select_unsplittable",
    "baseline_heuristic",
    "decision_from_paths",
    "write_decision_csv",
    "default_max_iterations",
]


class SolveError(RuntimeError):
    pass


class InfeasibleDemandError(SolveError):
    def __init__(self, flow_id: int, message: str):
        super().__init__(f"flow {flow_id}: {message}")
        self.flow_id = flow_id


class OracleIntractableError(SolveError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    """Tunables of the routing pipeline.

    epsilon: accuracy target of the fractional phase; also used by the
        default iteration budget.
    k_paths: candidate paths per OD pair.
    max_iterations: routing-step cap for the multiplicative-weights loop;
        None picks 10 * ceil(ln(n_links) / epsilon^2).
    cost_slack: allowed per-flow throughput play in the min-cost phase,
        as a fraction (the phase holds throughput exactly, well inside it).
    min_rate_fraction: floor rate N as a fraction of each demand's rate.
    """

    epsilon: float = 0.05
    k_paths: int = 5
    max_iterations: int | None = None
    cost_slack: float = 0.01
    min_rate_fraction: float = 0.0

    def __post_init__(self) -> None:
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must be in (0, 1)")
        if self.k_paths < 1:
            raise ValueError("k_paths must be >= 1")
        if self.max_iterations is not None and self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")
        if not 0 <= self.cost_slack < 1:
            raise ValueError("cost_slack must be in [0, 1)")
        if not 0 <= self.min_rate_fraction <= 1:
            raise ValueError("min_rate_fraction must be in [0, 1]")


def default_max_iterations(n_links: int, epsilon: float) -> int:
    return 10 * math.ceil(math.log(max(n_links, 2)) / epsilon**2)


# ---------------------------------------------------------------------------
# admissibility

@dataclass(frozen=True)
class Violation:
    kind: str
    flow_id: int | None = None
    link_id: int | None = None
    node: str | None = None
    detail: str = ""


@dataclass
class AdmissibilityReport:
    ok: bool
    violations: tuple[Violation, ...]

    def kinds(self) -> set[str]:
        return {v.kind for v in self.violations}


def _iter_flow_link_rates(obj) -> list[tuple[FlowDemand, dict[int, float]]]:
    """(demand, {link id: rate}) per flow, for decisions and fractional flows."""
    out = []
    if isinstance(obj, RoutingDecision):
        for route in obj.routes:
            rates: dict[int, float] = {}
            if route.path is not None and route.rate_bps > 0:
                for lid in route.path.links:
                    rates[lid] = rates.get(lid, 0.0) + route.rate_bps
            out.append((route.demand, rates))
    elif isinstance(obj, FractionalFlow):
        for d in obj.demands:
            out.append((d, obj.flow_link_rates(d.flow_id)))
    else:
        raise TypeError(f"cannot check admissibility of {type(obj).__name__}")
    return out


def check_admissible(
    net: Network,
    state: NetworkState,
    obj,
    tol: float = 1e-6,
) -> AdmissibilityReport:
    """Evaluate every routing constraint family on a decision or flow.

    Checks, per flow: nonnegative link rates, per-flow rate on a link within
    the link's capacity, flow conservation at intermediate nodes, no inflow
    at the source, no outflow at the sink, source egress within [N, R].
    Across flows: aggregate load within the state's available capacity.
    Tolerances are relative (plus a small absolute term) since rates are
    floats. Returns every violation found, not just the first.
    """
    violations: list[Violation] = []
    per_flow = _iter_flow_link_rates(obj)
    caps = net.capacities
    agg = np.zeros(net.n_links, dtype=np.float64)

    for demand, rates in per_flow:
        inflow: dict[str, float] = {}
        outflow: dict[str, float] = {}
        for lid, rate in rates.items():
            link = net.links[lid]
            atol = tol * max(1.0, caps[lid])
            if rate < -atol:
                violations.append(Violation(
                    "negative-rate", flow_id=demand.flow_id, link_id=lid,
                    detail=f"rate {rate:.3f} bps",
                ))
            if rate > caps[lid] + atol:
                violations.append(Violation(
                    "link-capacity", flow_id=demand.flow_id, link_id=lid,
                    detail=f"rate {rate:.1f} > capacity {caps[lid]:.1f} bps",
                ))
            agg[lid] += rate
            outflow[link.src] = outflow.get(link.src, 0.0) + rate
            inflow[link.dst] = inflow.get(link.dst, 0.0) + rate
        for node in set(inflow) | set(outflow):
            fin = inflow.get(node, 0.0)
            fout = outflow.get(node, 0.0)
            atol = tol * max(1.0, fin, fout)
            if node == demand.src:
                if fin > atol:
                    violations.append(Violation(
                        "source-inflow", flow_id=demand.flow_id, node=node,
                        detail=f"{fin:.1f} bps entering the source",
                    ))
            elif node == demand.dst:
                if fout > atol:
                    violations.append(Violation(
                        "sink-outflow", flow_id=demand.flow_id, node=node,
                        detail=f"{fout:.1f} bps leaving the sink",
                    ))
            elif abs(fin - fout) > atol:
                violations.append(Violation(
                    "conservation", flow_id=demand.flow_id, node=node,
                    detail=f"in {fin:.1f} != out {fout:.1f} bps",
                ))
        egress = outflow.get(demand.src, 0.0)
        atol = tol * max(1.0, demand.max_rate_bps)
        if egress > demand.max_rate_bps + atol:
            violations.append(Violation(
                "max-rate", flow_id=demand.flow_id,
                detail=f"egress {egress:.1f} > R {demand.max_rate_bps:.1f} bps",
            ))
        if egress < demand.min_rate_bps - atol:
            violations.append(Violation(
                "min-rate", flow_id=demand.flow_id,
                detail=f"egress {egress:.1f} < N {demand.min_rate_bps:.1f} bps",
            ))

    over = agg > state.available_bps + tol * np.maximum(1.0, state.available_bps)
    for lid in np.flatnonzero(over):
        violations.append(Violation(
            "aggregate-capacity", link_id=int(lid),
            detail=f"load {agg[lid]:.1f} > available {state.available_bps[lid]:.1f} bps",
        ))
    return AdmissibilityReport(ok=not violations, violations=tuple(violations))


# ---------------------------------------------------------------------------
# result types

@dataclass
class FractionalFlow:
    """A splittable routing: per flow, rate spread over its candidate paths.

    Either path-based (candidates + path_rates) or, for hand-built test
    inputs, raw per-link rates. Throughput of a flow is its source egress.
    """

    demands: tuple[FlowDemand, ...]
    candidates: dict[int, tuple[Path, ...]] = field(default_factory=dict)
    path_rates: dict[int, np.ndarray] = field(default_factory=dict)
    raw_link_rates: dict[int, dict[int, float]] | None = None
    converged: bool = True
    iterations: int = 0
    # flat-array mirror of candidates/path_rates, so the later pipeline
    # stages skip re-flattening; absent on hand-built flows
    _arrays: object = field(default=None, repr=False, compare=False)
    _x: np.ndarray | None = field(default=None, repr=False, compare=False)

    def flow_throughput(self, flow_id: int) -> float:
        if self.raw_link_rates is not None:
            raise SolveError("flow_throughput needs path-based flows; "
                             "use check_admissible for raw link rates")
        x = self.path_rates.get(flow_id)
        return float(x.sum()) if x is not None else 0.0

    @property
    def throughput_bps(self) -> float:
        return float(sum(self.flow_throughput(d.flow_id) for d in self.demands))

    def flow_link_rates(self, flow_id: int) -> dict[int, float]:
        if self.raw_link_rates is not None:
            return dict(self.raw_link_rates.get(flow_id, {}))
        rates: dict[int, float] = {}
        x = self.path_rates.get(flow_id)
        if x is None:
            return rates
        for path, r in zip(self.candidates[flow_id], x):
            if r > 0.0:
                for lid in path.links:
                    rates[lid] = rates.get(lid, 0.0) + float(r)
        return rates

    def link_load(self, n_links: int) -> np.ndarray:
        load = np.zeros(n_links, dtype=np.float64)
        for d in self.demands:
            for lid, rate in self.flow_link_rates(d.flow_id).items():
                load[lid] += rate
        return load

    def total_cost(self, state: NetworkState) -> float:
        """Sum of rate * link cost over all flows, in Mbps * ms."""
        cost = 0.0
        for d in self.demands:
            for lid, rate in self.flow_link_rates(d.flow_id).items():
                cost += (rate / 1e6) * state.cost_ms[lid]
        return cost


@dataclass(frozen=True)
class FlowRoute:
    demand: FlowDemand
    path: Path | None
    rate_bps: float
    cost_contrib: float = 0.0  # (rate in Mbps) * (path cost in ms)
    note: str = ""


@dataclass
class RoutingDecision:
    routes: tuple[FlowRoute, ...]

    @property
    def throughput_bps(self) -> float:
        return float(sum(r.rate_bps for r in self.routes if r.path is not None))

    @property
    def total_cost(self) -> float:
        return float(sum(r.cost_contrib for r in self.routes))

    @property
    def unrouted(self) -> tuple[FlowRoute, ...]:
        return tuple(r for r in self.routes if r.path is None)

    def routed_index(self) -> dict[int, FlowRoute]:
        return {r.demand.flow_id: r for r in self.routes if r.path is not None}


def write_decision_csv(decision: RoutingDecision, path: str | FsPath) -> None:
    """Rows of `flow_id, src, dst, rate_bps, path, cost_contrib`; the path
    column is the link-id sequence joined with ';' (empty if unrouted)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["flow_id", "src", "dst", "rate_bps", "path", "cost_contrib"])
        for r in decision.routes:
            links = ";".join(str(l) for l in r.path.links) if r.path else ""
            w.writerow([
                r.demand.flow_id, r.demand.src, r.demand.dst,
                repr(float(r.rate_bps)), links, repr(float(r.cost_contrib)),
            ])


# ---------------------------------------------------------------------------
# exact oracle (small instances only)

_ORACLE_MAX_NODES = 8
_ORACLE_MAX_FLOWS = 4
_ORACLE_MAX_ASSIGNMENTS = 2_000_000
_MBPS = 1e6


def _all_simple_paths(net: Network, src: str, dst: str) -> list[Path]:
    """Every simple path src->dst, sorted by (cost, link-id sequence)."""
    out: list[Path] = []
    trail: list[int] = []
    visited = {src}

    def walk(node: str, cost: float) -> None:
        if node == dst:
            out.append(Path(src=src, dst=dst, links=tuple(trail), cost=cost))
            return
        for link in net.out_links[node]:
            if link.dst in visited:
                continue
            visited.add(link.dst)
            trail.append(link.id)
            walk(link.dst, cost + link.cost)
            trail.pop()
            visited.discard(link.dst)

    walk(src, 0.0)
    out.sort(key=lambda p: (p.cost, p.links))
    return out


def _as_int_mbps(value_bps: float, what: str) -> int:
    mb = value_bps / _MBPS
    if abs(mb - round(mb)) > 1e-9:
        raise OracleIntractableError(f"{what} is not an integer Mbps value: {value_bps}")
    return int(round(mb))


def solve_exact_oracle(
    net: Network,
    state: NetworkState,
    demands: list[FlowDemand],
) -> RoutingDecision:
    """Provably optimal unsplittable routing by exhaustive enumeration.

    Every flow is assigned one simple path (or left unrouted, only legal at
    N = 0) and an integer Mbps rate; the search maximizes total throughput,
    then minimizes total cost, then takes the lexicographically smallest
    (path assignment, rate vector). Only instances within the tractable
    bounds (<= 8 nodes, <= 4 flows, integer Mbps capacities and demands)
    are accepted.
    """
    if net.n_nodes > _ORACLE_MAX_NODES:
        raise OracleIntractableError(
            f"{net.n_nodes} nodes exceeds the oracle bound of {_ORACLE_MAX_NODES}")
    if len(demands) > _ORACLE_MAX_FLOWS:
        raise OracleIntractableError(
            f"{len(demands)} flows exceeds the oracle bound of {_ORACLE_MAX_FLOWS}")

    avail = [ _as_int_mbps(a, f"available capacity of link {i}")
              for i, a in enumerate(state.available_bps) ]
    r_max = [_as_int_mbps(d.max_rate_bps, f"flow {d.flow_id} max rate") for d in demands]
    r_min = [_as_int_mbps(d.min_rate_bps, f"flow {d.flow_id} min rate") for d in demands]

    options: list[list[Path | None]] = []
    total_assignments = 1
    for d, lo in zip(demands, r_min):
        paths = _all_simple_paths(net, d.src, d.dst)
        opts: list[Path | None] = ([None] if lo == 0 else []) + list(paths)
        if not opts:
            raise InfeasibleDemandError(d.flow_id, "no path and a positive minimum rate")
        options.append(opts)
        total_assignments *= len(opts)
        if total_assignments > _ORACLE_MAX_ASSIGNMENTS:
            raise OracleIntractableError(
                f"assignment space exceeds {_ORACLE_MAX_ASSIGNMENTS}")

    n = len(demands)
    best: tuple | None = None  # (-throughput, cost, path_key, rates)

    def path_key(assign: tuple[Path | None, ...]) -> tuple:
        return tuple(p.links if p is not None else () for p in assign)

    for assign in itertools.product(*options):
        # per-flow upper bound on this assignment: own bottleneck and R
        ub = []
        feasible = True
        for i, p in enumerate(assign):
            if p is None:
                if r_min[i] > 0:
                    feasible = False
                    break
                ub.append(0)
            else:
                bottleneck = min(avail[l] for l in p.links)
                hi = min(r_max[i], bottleneck)
                lo = max(r_min[i], 1)
                if hi < lo:
                    feasible = False
                    break
                ub.append(hi)
        if not feasible:
            continue

        # links shared between two assigned flows force joint enumeration;
        # otherwise each flow independently takes its upper bound
        used_links: dict[int, list[int]] = {}
        for i, p in enumerate(assign):
            if p is not None:
                for l in p.links:
                    used_links.setdefault(l, []).append(i)
        shared = {l: fs for l, fs in used_links.items() if len(fs) > 1}

        if not shared:
            rates = tuple(ub)
        else:
            vectors = _best_rates(assign, ub, r_min, avail, shared)
            if vectors is None:
                continue
            # several vectors can tie on throughput; cost decides, then
            # the lexicographically smallest
            rates = min(vectors, key=lambda v: (
                sum(v[i] * assign[i].cost for i in range(n)
                    if assign[i] is not None),
                v,
            ))

        throughput = sum(rates)
        cost = sum(rates[i] * assign[i].cost for i in range(n) if assign[i] is not None)
        key = (-throughput, cost, path_key(assign), rates)
        if best is None or key < best:
            best = key

    if best is None:
        infeasible = [d.flow_id for d, lo in zip(demands, r_min) if lo > 0]
        raise InfeasibleDemandError(
            infeasible[0] if infeasible else demands[0].flow_id,
            "no feasible assignment satisfies the minimum rates")

    _, _, chosen_paths, rates = best
    routes = []
    for d, links, rate in zip(demands, chosen_paths, rates):
        if links:
            cost = float(sum(net.links[l].cost for l in links))
            path = Path(src=d.src, dst=d.dst, links=links, cost=cost)
            routes.append(FlowRoute(
                demand=d, path=path, rate_bps=rate * _MBPS,
                cost_contrib=rate * path.cost,
            ))
        else:
            routes.append(FlowRoute(demand=d, path=None, rate_bps=0.0,
                                    note="oracle: left unrouted"))
    return RoutingDecision(routes=tuple(routes))


def _best_rates(assign, ub, r_min, avail, shared) -> list[tuple] | None:
    """Max-throughput integer rates for a fixed path assignment.

    Depth-first over flows in index order, each rate descending from its
    bound given the residual capacities; prunes on the optimistic total.
    Returns every rate vector achieving the maximum total; the caller
    breaks the tie by cost.
    """
    n = len(assign)
    best_rates: list[tuple] = []
    best_total = -1

    resid = {l: avail[l] for l in shared}

    def bound_for(i: int) -> int:
        if assign[i] is None:
            return 0
        b = ub[i]
        for l in assign[i].links:
            if l in resid and resid[l] < b:
                b = resid[l]
        return b

    rates = [0] * n

    def rec(i: int, total: int) -> None:
        nonlocal best_total, best_rates
        if i == n:
            if total > best_total:
                best_total = total
                best_rates = [tuple(rates)]
            elif total == best_total:
                best_rates.append(tuple(rates))
            return
        # optimistic bound: everything left at its cap
        optimistic = total + sum(ub[j] for j in range(i, n))
        if optimistic < best_total:
            return
        hi = bound_for(i)
        lo = max(r_min[i], 1) if assign[i] is not None else 0
        if hi < lo:
            if assign[i] is None and r_min[i] == 0:
                rates[i] = 0
                rec(i + 1, total)
            return
        for r in range(hi, lo - 1, -1):
            rates[i] = r
            if assign[i] is not None:
                for l in assign[i].links:
                    if l in resid:
                        resid[l] -= r
            rec(i + 1, total + r)
            if assign[i] is not None:
                for l in assign[i].links:
                    if l in resid:
                        resid[l] += r
        rates[i] = 0

    rec(0, 0)
    if best_total < 0:
        return None
    return best_rates


# ---------------------------------------------------------------------------
# candidate-set assembly shared by the solver stages

@dataclass
class _PathArrays:
    fp_ptr: np.ndarray
    path_ptr: np.ndarray
    path_links: np.ndarray
    lp_ptr: np.ndarray
    lp_idx: np.ndarray
    path_cost: np.ndarray
    paths: list[Path]  # flat, aligned with path indices


def _assemble(
    net: Network,
    state: NetworkState,
    demands: list[FlowDemand],
    table: CandidateTable,
    filter_zero: bool = True,
) -> _PathArrays:
    """Flatten the candidate sets of `demands` into CSR arrays.

    filter_zero drops candidates crossing a zero-headroom link, which the
    throughput solver wants; callers that map externally supplied candidate
    indices must keep the table's numbering and pass False.
    """
    zero_avail = state.available_bps <= 0.0
    any_zero = filter_zero and bool(zero_avail.any())
    # the flat arrays depend only on the OD sequence and the cost vector
    # unless some link has zero headroom, so per-tick reuse is nearly free
    cache = key = None
    if not any_zero:
        if table._arrays is None:
            table._arrays = {}
        cache = table._arrays
        key = (tuple((d.src, d.dst) for d in demands), state.cost_ms.tobytes())
        hit = cache.get(key)
        if hit is not None:
            return hit

    fp_ptr = np.zeros(len(demands) + 1, dtype=np.int64)
    flat_paths: list[Path] = []
    links_chunks: list[tuple[int, ...]] = []
    for i, d in enumerate(demands):
        cands = table.for_od(d.src, d.dst)
        if any_zero:
            cands = tuple(
                p for p in cands if not any(zero_avail[l] for l in p.links)
            )
        flat_paths.extend(cands)
        links_chunks.extend(p.links for p in cands)
        fp_ptr[i + 1] = len(flat_paths)
    n_paths = len(flat_paths)
    path_ptr = np.zeros(n_paths + 1, dtype=np.int64)
    for i, links in enumerate(links_chunks):
        path_ptr[i + 1] = path_ptr[i] + len(links)
    path_links = np.fromiter(
        (l for links in links_chunks for l in links),
        dtype=np.int64, count=int(path_ptr[-1]),
    )
    path_cost = np.zeros(n_paths, dtype=np.float64)
    for i, links in enumerate(links_chunks):
        path_cost[i] = state.cost_ms[list(links)].sum()
    # reverse map link -> paths
    counts = np.zeros(net.n_links, dtype=np.int64)
    for l in path_links:
        counts[l] += 1
    lp_ptr = np.zeros(net.n_links + 1, dtype=np.int64)
    np.cumsum(counts, out=lp_ptr[1:])
    lp_idx = np.zeros(int(lp_ptr[-1]), dtype=np.int64)
    cursor = lp_ptr[:-1].copy()
    for p in range(n_paths):
        for j in range(path_ptr[p], path_ptr[p + 1]):
            l = path_links[j]
            lp_idx[cursor[l]] = p
            cursor[l] += 1
    arrays = _PathArrays(
        fp_ptr=fp_ptr, path_ptr=path_ptr,
        path_links=path_links, lp_ptr=lp_ptr, lp_idx=lp_idx,
        path_cost=path_cost, paths=flat_paths,
    )
    if cache is not None:
        if len(cache) >= 8:
            cache.clear()
        cache[key] = arrays
    return arrays


def _bottleneck(avail: np.ndarray, path: Path) -> float:
    return float(min(avail[l] for l in path.links))


def _per_flow_sums(x: np.ndarray, fp_ptr: np.ndarray) -> np.ndarray:
    csum = np.concatenate(([0.0], np.cumsum(x)))
    return csum[fp_ptr[1:]] - csum[fp_ptr[:-1]]


def _flat_view(frac: "FractionalFlow", state: NetworkState):
    """CSR arrays plus a mutable copy of the rate vector for a flow.

    Reuses the solver's flat mirror when present, otherwise flattens the
    per-flow dicts. Path costs always come from the given state.
    """
    if frac._arrays is not None and frac._x is not None:
        arrays: _PathArrays = frac._arrays
        fp_ptr, path_ptr = arrays.fp_ptr, arrays.path_ptr
        path_links, flat_paths = arrays.path_links, arrays.paths
        x = frac._x.copy()
    else:
        demands = list(frac.demands)
        fp_ptr = np.zeros(len(demands) + 1, dtype=np.int64)
        flat_paths = []
        x_parts = []
        for i, d in enumerate(demands):
            cands = frac.candidates[d.flow_id]
            flat_paths.extend(cands)
            x_parts.append(np.asarray(frac.path_rates[d.flow_id],
                                      dtype=np.float64))
            fp_ptr[i + 1] = len(flat_paths)
        path_ptr = np.zeros(len(flat_paths) + 1, dtype=np.int64)
        for i, p in enumerate(flat_paths):
            path_ptr[i + 1] = path_ptr[i] + len(p.links)
        path_links = np.fromiter(
            (l for p in flat_paths for l in p.links),
            dtype=np.int64, count=int(path_ptr[-1]),
        )
        x = np.concatenate(x_parts) if x_parts else np.zeros(0)
    if len(path_links):
        path_cost = np.add.reduceat(state.cost_ms[path_links], path_ptr[:-1])
    else:
        path_cost = np.zeros(len(flat_paths), dtype=np.float64)
    return fp_ptr, path_ptr, path_links, path_cost, flat_paths, x


# ---------------------------------------------------------------------------
# solver stages

def fractional_max_throughput(
    net: Network,
    state: NetworkState,
    demands: list[FlowDemand],
    config: SolverConfig,
    table: CandidateTable | None = None,
) -> FractionalFlow:
    """Near-optimal splittable routing over candidate paths.

    Multiplicative weights followed by an exact feasibility rescale and a
    greedy top-up. Flows with a positive floor N are pre-routed greedily on
    their roomiest candidate; an unmeetable floor raises
    InfeasibleDemandError naming the flow.
    """
    if table is None:
        table = build_candidate_table(net, config.k_paths,
                                      ods=[(d.src, d.dst) for d in demands])
    arrays = _assemble(net, state, demands, table)
    n_flows = len(demands)
    avail = state.available_bps.copy()

    # floor rates first (usually none: the default min_rate_fraction is 0)
    preroute = np.zeros(len(arrays.paths), dtype=np.float64)
    for i, d in enumerate(demands):
        if d.min_rate_bps <= 0:
            continue
        lo, hi = arrays.fp_ptr[i], arrays.fp_ptr[i + 1]
        if lo == hi:
            raise InfeasibleDemandError(d.flow_id, "no usable candidate path")
        best, best_room = -1, -1.0
        for p in range(lo, hi):
            room = _bottleneck(avail, arrays.paths[p])
            if room > best_room:
                best, best_room = p, room
        if best_room + 1e-9 < d.min_rate_bps:
            raise InfeasibleDemandError(
                d.flow_id,
                f"minimum rate {d.min_rate_bps:.1f} bps exceeds the best "
                f"candidate bottleneck {best_room:.1f} bps")
        preroute[best] = d.min_rate_bps
        for l in arrays.paths[best].links:
            avail[l] -= d.min_rate_bps

    rcap = np.array(
        [d.max_rate_bps - d.min_rate_bps for d in demands], dtype=np.float64)
    rmax = np.array([d.max_rate_bps for d in demands], dtype=np.float64)
    max_iter = config.max_iterations
    if max_iter is None:
        max_iter = default_max_iterations(net.n_links, config.epsilon)
    eps_internal = 0.6 * config.epsilon

    # cheap exactness test: when a greedy pass saturates every flow's cap,
    # the fractional optimum (bounded by sum R) is attained and the
    # multiplicative-weights machinery has nothing left to win
    x = preroute.copy()
    trial_resid = avail.copy()
    _kernels.greedy_fill(
        arrays.fp_ptr, arrays.path_ptr, arrays.path_links,
        trial_resid, rcap, x,
    )
    flow_tot = _per_flow_sums(x, arrays.fp_ptr)
    saturated = bool(np.all(flow_tot >= rmax * (1 - 1e-9)))

    if saturated:
        iterations, converged = 0, True
    elif len(arrays.paths) > 0 and rcap.sum() > 0:
        raw, iterations, converged = _kernels.mw_max_throughput(
            arrays.fp_ptr, arrays.path_ptr, arrays.path_links,
            arrays.lp_ptr, arrays.lp_idx,
            avail, rcap, eps_internal, max_iter,
        )
        # rescale by the worst actual overload; the textbook log factor is an
        # upper bound for it, so this is never less feasible and usually much
        # sharper
        overload = 1.0
        load = _kernels.path_loads(arrays.path_ptr, arrays.path_links, raw,
                                   net.n_links)
        with np.errstate(divide="ignore", invalid="ignore"):
            link_over = np.where(load > 0, load / avail, 0.0)
        if link_over.size:
            overload = max(overload, float(np.nanmax(link_over)))
        for i in range(n_flows):
            if rcap[i] > 0:
                tot = raw[arrays.fp_ptr[i]:arrays.fp_ptr[i + 1]].sum()
                overload = max(overload, tot / rcap[i])
        x = raw / overload + preroute

        # top up whatever still fits: flows in id order, candidates in cost
        # order; only ever adds throughput on top of the scaled solution
        load = _kernels.path_loads(arrays.path_ptr, arrays.path_links, x,
                                   net.n_links)
        resid = np.maximum(state.available_bps - load, 0.0)
        want = np.maximum(rmax - _per_flow_sums(x, arrays.fp_ptr), 0.0)
        _kernels.greedy_fill(
            arrays.fp_ptr, arrays.path_ptr, arrays.path_links,
            resid, want, x,
        )
    else:
        x = preroute.copy()
        iterations, converged = 0, True

    candidates = {}
    path_rates = {}
    for i, d in enumerate(demands):
        lo, hi = arrays.fp_ptr[i], arrays.fp_ptr[i + 1]
        candidates[d.flow_id] = tuple(arrays.paths[lo:hi])
        path_rates[d.flow_id] = x[lo:hi]
    return FractionalFlow(
        demands=tuple(demands),
        candidates=candidates,
        path_rates=path_rates,
        converged=bool(converged),
        iterations=int(iterations),
        _arrays=arrays,
        _x=x,
    )


def fractional_min_cost(
    net: Network,
    state: NetworkState,
    frac: FractionalFlow,
    config: SolverConfig,
) -> FractionalFlow:
    """Shift rate onto strictly cheaper candidates at fixed throughput.

    Total cost never increases; per-flow throughput is preserved exactly,
    which sits inside any configured slack. A flow that is already on its
    cheapest feasible spread is left untouched.
    """
    if frac.raw_link_rates is not None:
        raise SolveError("min-cost phase needs a path-based fractional flow")
    demands = list(frac.demands)
    fp_ptr, path_ptr, path_links, path_cost, flat_paths, x = _flat_view(
        frac, state)
    if not flat_paths:
        return FractionalFlow(
            demands=frac.demands, candidates=dict(frac.candidates),
            path_rates={d.flow_id: np.asarray(frac.path_rates[d.flow_id]).copy()
                        for d in demands},
            converged=frac.converged, iterations=frac.iterations,
        )
    _kernels.mincost_shift(
        fp_ptr, path_ptr, path_links, path_cost,
        state.available_bps, x, 30, 1e-6,
    )
    path_rates = {
        d.flow_id: x[fp_ptr[i]:fp_ptr[i + 1]] for i, d in enumerate(demands)
    }
    return FractionalFlow(
        demands=frac.demands,
        candidates=dict(frac.candidates),
        path_rates=path_rates,
        converged=frac.converged,
        iterations=frac.iterations,
        _arrays=frac._arrays,
        _x=x if frac._arrays is not None else None,
    )


def select_unsplittable(
    net: Network,
    state: NetworkState,
    frac: FractionalFlow,
    config: SolverConfig,
) -> RoutingDecision:
    """Commit each flow to one candidate path.

    Flows are processed in decreasing fractional-throughput order (ties by
    flow id). Each takes the candidate where it can realize the highest rate,
    capped by both R and its fractional throughput (so total decision
    throughput never exceeds the fractional total), with ties broken by
    larger fractional share, then candidate order. Flows that fit nowhere
    stay unrouted, which is an error condition only if their floor N is
    positive (noted on the route).
    """
    if frac.raw_link_rates is not None:
        raise SolveError("selection needs a path-based fractional flow")
    demands = list(frac.demands)
    n = len(demands)
    fp_ptr, path_ptr, path_links, path_cost, flat_paths, x = _flat_view(
        frac, state)
    pi = _per_flow_sums(x, fp_ptr)
    rcap = np.array([d.max_rate_bps for d in demands], dtype=np.float64)
    nmin = np.array([d.min_rate_bps for d in demands], dtype=np.float64)
    order = np.lexsort((np.arange(n), -pi)).astype(np.int64)

    if flat_paths:
        chosen, rate, minfail = _kernels.select_paths(
            order, fp_ptr, path_ptr, path_links, x, pi, rcap, nmin,
            state.available_bps,
        )
    else:
        chosen = np.full(n, -1, dtype=np.int64)
        rate = np.zeros(n)
        minfail = np.array(
            [1 if d.min_rate_bps > 0 else 0 for d in demands], dtype=np.int64)

    routes = []
    for i, d in enumerate(demands):
        if chosen[i] >= 0:
            p = int(chosen[i])
            routes.append(FlowRoute(
                demand=d, path=flat_paths[p], rate_bps=float(rate[i]),
                cost_contrib=(float(rate[i]) / 1e6) * float(path_cost[p]),
            ))
        else:
            note = ("minimum rate unmeetable on every candidate"
                    if minfail[i] else "no residual capacity on any candidate")
            routes.append(FlowRoute(demand=d, path=None, rate_bps=0.0, note=note))
    return RoutingDecision(routes=tuple(routes))


def baseline_heuristic(
    net: Network,
    state: NetworkState,
    tm: np.ndarray,
    config: SolverConfig,
    table: CandidateTable | None = None,
) -> tuple[RoutingDecision, float]:
    """Full pipeline on a traffic matrix; returns (decision, solve seconds)."""
    t0 = time.perf_counter()
    demands = tm_to_demands(tm, net, min_fraction=config.min_rate_fraction)
    if table is None:
        table = build_candidate_table(net, config.k_paths)
    frac = fractional_max_throughput(net, state, demands, config, table=table)
    frac = fractional_min_cost(net, state, frac, config)
    decision = select_unsplittable(net, state, frac, config)
    return decision, time.perf_counter() - t0


def decision_from_paths(
    net: Network,
    state: NetworkState,
    demands: list[FlowDemand],
    chosen_idx: dict[int, int],
    table: CandidateTable,
) -> tuple[RoutingDecision, float]:
    """Admissible decision from externally chosen candidate indices.

    Demands are processed in decreasing requested-rate order (ties by flow
    id) and clipped to residual capacity. A demand whose chosen path cannot
    carry its floor rate walks the remaining candidates in cost order.
    Returns the decision and the fraction of requested rate dropped.
    """
    arrays = _assemble(net, state, demands, table, filter_zero=False)
    n = len(demands)
    rmax = np.array([d.max_rate_bps for d in demands], dtype=np.float64)
    rmin = np.array([d.min_rate_bps for d in demands], dtype=np.float64)
    choice = np.array([chosen_idx.get(d.flow_id, 0) for d in demands],
                      dtype=np.int64)
    order = np.lexsort((np.arange(n), -rmax)).astype(np.int64)
    resid = state.available_bps.copy()
    picked, rate = _kernels.route_choices(
        order, arrays.fp_ptr, arrays.path_ptr, arrays.path_links,
        choice, rmax, rmin, resid,
    )
    routes = []
    carried = 0.0
    for i, d in enumerate(demands):
        if picked[i] >= 0:
            p = int(picked[i])
            path = arrays.paths[p]
            pick = int(choice[i])
            note = ("" if p == arrays.fp_ptr[i] + pick
                    else f"fell back from candidate {pick}")
            routes.append(FlowRoute(
                demand=d, path=path, rate_bps=float(rate[i]),
                cost_contrib=(float(rate[i]) / 1e6) * float(arrays.path_cost[p]),
                note=note,
            ))
            carried += float(rate[i])
        else:
            routes.append(FlowRoute(
                demand=d, path=None, rate_bps=0.0,
                note="no candidate with usable capacity",
            ))
    requested = float(rmax.sum())
    dropped = 0.0 if requested <= 0 else 1.0 - carried / requested
    return RoutingDecision(routes=tuple(routes)), dropped
