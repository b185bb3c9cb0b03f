"""Directed network topologies, states, paths and candidate path tables.

A topology file is plain text with two sections. ``[nodes]`` lists one node
name per line; ``[links]`` lists one directed link per line as
``src dst capacity_bps cost``. Link ids are assigned in file order, starting
at 0, and everything downstream (state vectors, encodings, tie-breaks) keys
off that order, so the order in the file is part of the interface.
"""

from __future__ import annotations

import hashlib
import heapq
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path as FsPath
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "TopologyError",
    "Link",
    "Network",
    "Path",
    "NetworkState",
    "CandidateTable",
    "load_topology",
    "parse_topology",
    "builtin_topology",
    "initial_state",
    "make_path",
    "shortest_path",
    "k_candidate_paths",
    "build_candidate_table",
    "apply_routing",
    "od_pairs",
]


class TopologyError(ValueError):
    """Raised for malformed topology files or inconsistent path/link data."""


@dataclass(frozen=True)
class Link:
    """One directed link. Cost is a latency-like weight in milliseconds."""

    id: int
    src: str
    dst: str
    capacity_bps: float
    cost: float


@dataclass(frozen=True)
class Network:
    nodes: tuple[str, ...]
    links: tuple[Link, ...]

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for name in self.nodes:
            if not name:
                raise TopologyError("empty node name")
            if name in seen:
                raise TopologyError(f"duplicate node name {name!r}")
            seen.add(name)
        for link in self.links:
            if link.src not in seen or link.dst not in seen:
                raise TopologyError(
                    f"link {link.id} references unknown node "
                    f"{link.src!r} -> {link.dst!r}"
                )
            if link.src == link.dst:
                raise TopologyError(f"link {link.id} is a self-loop at {link.src!r}")
            if link.capacity_bps <= 0:
                raise TopologyError(f"link {link.id} has non-positive capacity")
            if link.cost < 0:
                raise TopologyError(f"link {link.id} has negative cost")

    @cached_property
    def node_index(self) -> dict[str, int]:
        return {name: i for i, name in enumerate(self.nodes)}

    @cached_property
    def out_links(self) -> dict[str, tuple[Link, ...]]:
        out: dict[str, list[Link]] = {name: [] for name in self.nodes}
        for link in self.links:
            out[link.src].append(link)
        return {name: tuple(ls) for name, ls in out.items()}

    @cached_property
    def in_links(self) -> dict[str, tuple[Link, ...]]:
        inc: dict[str, list[Link]] = {name: [] for name in self.nodes}
        for link in self.links:
            inc[link.dst].append(link)
        return {name: tuple(ls) for name, ls in inc.items()}

    @cached_property
    def capacities(self) -> np.ndarray:
        arr = np.array([l.capacity_bps for l in self.links], dtype=np.float64)
        arr.setflags(write=False)
        return arr

    @cached_property
    def costs(self) -> np.ndarray:
        arr = np.array([l.cost for l in self.links], dtype=np.float64)
        arr.setflags(write=False)
        return arr

    @cached_property
    def content_hash(self) -> str:
        """Stable identity of the topology, used to pin models and datasets."""
        h = hashlib.sha256()
        for name in self.nodes:
            h.update(name.encode())
            h.update(b"\x00")
        for link in self.links:
            h.update(f"{link.src}>{link.dst}:{link.capacity_bps!r}:{link.cost!r}".encode())
            h.update(b"\x00")
        return h.hexdigest()

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_links(self) -> int:
        return len(self.links)


@dataclass(frozen=True)
class Path:
    """A simple directed path, stored as the link-id sequence it traverses."""

    src: str
    dst: str
    links: tuple[int, ...]
    cost: float

    def __len__(self) -> int:
        return len(self.links)


def make_path(net: Network, link_ids: Sequence[int]) -> Path:
    """Build a Path from link ids, validating chaining and simplicity."""
    if not link_ids:
        raise TopologyError("a path needs at least one link")
    links = [net.links[i] for i in link_ids]
    visited = [links[0].src]
    for prev, nxt in zip(links, links[1:]):
        if prev.dst != nxt.src:
            raise TopologyError(
                f"links {prev.id} and {nxt.id} do not chain ({prev.dst!r} != {nxt.src!r})"
            )
    for link in links:
        if link.dst in visited:
            raise TopologyError(f"path revisits node {link.dst!r}")
        visited.append(link.dst)
    cost = float(sum(l.cost for l in links))
    return Path(src=links[0].src, dst=links[-1].dst, links=tuple(link_ids), cost=cost)


@dataclass
class NetworkState:
    """Per-link available capacity and cost at one routing tick."""

    network: Network
    available_bps: np.ndarray
    cost_ms: np.ndarray
    timestamp: int = 0

    def __post_init__(self) -> None:
        self.available_bps = np.asarray(self.available_bps, dtype=np.float64)
        self.cost_ms = np.asarray(self.cost_ms, dtype=np.float64)
        n = self.network.n_links
        if self.available_bps.shape != (n,) or self.cost_ms.shape != (n,):
            raise TopologyError("state vectors must have one entry per link")
        caps = self.network.capacities
        if np.any(self.available_bps < -1e-9) or np.any(self.available_bps > caps * (1 + 1e-9)):
            raise TopologyError("available capacity outside [0, capacity]")

    def copy(self) -> "NetworkState":
        return NetworkState(
            network=self.network,
            available_bps=self.available_bps.copy(),
            cost_ms=self.cost_ms.copy(),
            timestamp=self.timestamp,
        )


def initial_state(net: Network, timestamp: int = 0) -> NetworkState:
    """State with every link fully available."""
    return NetworkState(
        network=net,
        available_bps=net.capacities.copy(),
        cost_ms=net.costs.copy(),
        timestamp=timestamp,
    )


# ---------------------------------------------------------------------------
# parsing

def parse_topology(text: str, origin: str = "<string>") -> Network:
    nodes: list[str] = []
    links: list[Link] = []
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip().lower()
            if section not in ("nodes", "links"):
                raise TopologyError(f"{origin}:{lineno}: unknown section [{section}]")
            continue
        if section == "nodes":
            if len(line.split()) != 1:
                raise TopologyError(f"{origin}:{lineno}: expected one node name per line")
            nodes.append(line)
        elif section == "links":
            parts = line.split()
            if len(parts) != 4:
                raise TopologyError(
                    f"{origin}:{lineno}: expected 'src dst capacity_bps cost', got {raw!r}"
                )
            src, dst, cap_s, cost_s = parts
            try:
                cap = float(cap_s)
                cost = float(cost_s)
            except ValueError as exc:
                raise TopologyError(f"{origin}:{lineno}: bad number in link record") from exc
            links.append(Link(id=len(links), src=src, dst=dst, capacity_bps=cap, cost=cost))
        else:
            raise TopologyError(f"{origin}:{lineno}: content before any section header")
    if not nodes:
        raise TopologyError(f"{origin}: no [nodes] section")
    if not links:
        raise TopologyError(f"{origin}: no [links] section")
    try:
        return Network(nodes=tuple(nodes), links=tuple(links))
    except TopologyError as exc:
        raise TopologyError(f"{origin}: {exc}") from exc


def load_topology(path: str | FsPath) -> Network:
    p = FsPath(path)
    return parse_topology(p.read_text(), origin=str(p))


def builtin_topology(name: str) -> Network:
    """Load a packaged topology by name ('geant' or 'triangle')."""
    try:
        text = resources.files("flowcast.data").joinpath(f"{name}.topo").read_text()
    except FileNotFoundError:
        raise TopologyError(f"no builtin topology named {name!r}") from None
    return parse_topology(text, origin=f"builtin:{name}")


def od_pairs(net: Network) -> list[tuple[str, str]]:
    """All ordered node pairs, source-major in node order. Defines slot order
    for traffic matrices, encodings and flow ids."""
    return [(s, d) for s in net.nodes for d in net.nodes if s != d]


# ---------------------------------------------------------------------------
# shortest paths and candidate tables

def _best_path(
    net: Network,
    src: str,
    dst: str,
    banned_links: frozenset[int] = frozenset(),
    banned_nodes: frozenset[str] = frozenset(),
) -> Path | None:
    """Min-cost path with deterministic lexicographic link-id tie-break.

    Uniform-cost search keyed on (cost, link-id sequence). The lexicographic
    component makes equal-cost choices reproducible across runs and platforms.
    """
    if src == dst or src in banned_nodes or dst in banned_nodes:
        return None
    heap: list[tuple[float, tuple[int, ...], str]] = [(0.0, (), src)]
    done: set[str] = set()
    while heap:
        cost, trail, node = heapq.heappop(heap)
        if node in done:
            continue
        done.add(node)
        if node == dst:
            return Path(src=src, dst=dst, links=trail, cost=cost)
        for link in net.out_links[node]:
            if link.id in banned_links or link.dst in banned_nodes or link.dst in done:
                continue
            heapq.heappush(heap, (cost + link.cost, trail + (link.id,), link.dst))
    return None


def shortest_path(net: Network, src: str, dst: str) -> Path | None:
    return _best_path(net, src, dst)


def k_candidate_paths(net: Network, src: str, dst: str, k: int) -> list[Path]:
    """Up to k loop-free paths in nondecreasing cost order (Yen's algorithm).

    Ties are broken by lexicographic link-id sequence, so the list is a pure
    function of the topology. Returns fewer than k paths when the graph does
    not contain that many, and [] for disconnected pairs.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    first = _best_path(net, src, dst)
    if first is None:
        return []
    accepted = [first]
    candidates: list[tuple[float, tuple[int, ...]]] = []
    seen: set[tuple[int, ...]] = {first.links}
    while len(accepted) < k:
        prev = accepted[-1]
        prev_nodes = [net.links[i].src for i in prev.links] + [prev.dst]
        for spur_idx in range(len(prev.links)):
            root = prev.links[:spur_idx]
            spur_node = prev_nodes[spur_idx]
            banned_links = {
                p.links[spur_idx]
                for p in accepted
                if len(p.links) > spur_idx and p.links[:spur_idx] == root
            }
            banned_nodes = frozenset(prev_nodes[:spur_idx])
            spur = _best_path(
                net, spur_node, dst,
                banned_links=frozenset(banned_links),
                banned_nodes=banned_nodes,
            )
            if spur is None:
                continue
            full = root + spur.links
            if full in seen:
                continue
            seen.add(full)
            cost = float(sum(net.links[i].cost for i in full))
            heapq.heappush(candidates, (cost, full))
        if not candidates:
            break
        cost, links = heapq.heappop(candidates)
        accepted.append(Path(src=src, dst=dst, links=links, cost=cost))
    return accepted


@dataclass
class CandidateTable:
    """Candidate paths per OD pair for one topology at one k."""

    network: Network
    k: int
    paths: dict[tuple[str, str], tuple[Path, ...]]
    _arrays: dict | None = field(default=None, repr=False, compare=False)

    def for_od(self, src: str, dst: str) -> tuple[Path, ...]:
        return self.paths.get((src, dst), ())

    @property
    def ods(self) -> list[tuple[str, str]]:
        return list(self.paths.keys())


_TABLE_CACHE: dict[tuple[str, int, tuple[tuple[str, str], ...] | None], CandidateTable] = {}


def build_candidate_table(
    net: Network,
    k: int,
    ods: Iterable[tuple[str, str]] | None = None,
) -> CandidateTable:
    """Candidate table for the given OD pairs (default: all ordered pairs).

    Tables are cached per (topology, k, od set); building the full table for a
    23-node network costs a second or two, so reuse matters for per-tick work.
    """
    od_key = tuple(sorted(set(ods))) if ods is not None else None
    cache_key = (net.content_hash, k, od_key)
    hit = _TABLE_CACHE.get(cache_key)
    if hit is not None:
        return hit
    wanted = list(od_key) if od_key is not None else od_pairs(net)
    paths = {od: tuple(k_candidate_paths(net, od[0], od[1], k)) for od in wanted}
    table = CandidateTable(network=net, k=k, paths=paths)
    _TABLE_CACHE[cache_key] = table
    return table


# ---------------------------------------------------------------------------
# state transitions

def apply_routing(state: NetworkState, decision) -> NetworkState:
    """Subtract an admissible decision's link loads; bump the timestamp.

    Raises TopologyError naming the first overloaded link (lowest id) if the
    decision does not fit in the available capacity.
    """
    load = np.zeros(state.network.n_links, dtype=np.float64)
    for route in decision.routes:
        if route.path is None or route.rate_bps <= 0:
            continue
        for lid in route.path.links:
            load[lid] += route.rate_bps
    over = load > state.available_bps * (1 + 1e-9) + 1e-6
    if np.any(over):
        lid = int(np.flatnonzero(over)[0])
        raise TopologyError(
            f"decision overloads link {lid} "
            f"({load[lid]:.1f} > {state.available_bps[lid]:.1f} bps available)"
        )
    return NetworkState(
        network=state.network,
        available_bps=np.maximum(state.available_bps - load, 0.0),
        cost_ms=state.cost_ms.copy(),
        timestamp=state.timestamp + 1,
    )
