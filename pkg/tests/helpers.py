"""Shared oracles and instance generators for the test suite.

Everything here is written independently of the package internals it checks:
the simple-path enumerator is a plain DFS (cross-checks the k-shortest-path
search), and the finite-difference harness only calls the public loss
function. Instance generation is driven by an explicit numpy Generator so
any test can reproduce an instance from a seed.
"""

from __future__ import annotations

import numpy as np

from flowcast.neuralnet import Mlp, loss_and_gradients
from flowcast.topology import Link, Network, Path
from flowcast.traffic import FlowDemand


def random_network(rng: np.random.Generator, n_nodes: int,
                   extra_link_prob: float = 0.2) -> Network:
    """Strongly connected digraph: a one-way ring plus random chords.

    The ring guarantees every OD pair is reachable, so demand generation
    never has to retry. Capacities are integer Mbps (2..20) to keep the
    exact solver's integrality assumption satisfied; costs are one of a few
    half-integer values so cost ties actually occur.
    """
    nodes = tuple(f"n{i}" for i in range(n_nodes))
    links: list[Link] = []

    def add(s: int, d: int) -> None:
        links.append(Link(
            id=len(links), src=nodes[s], dst=nodes[d],
            capacity_bps=float(rng.integers(2, 21)) * 1e6,
            cost=float(rng.choice([1.0, 1.5, 2.0, 3.0, 5.0])),
        ))

    for i in range(n_nodes):
        add(i, (i + 1) % n_nodes)
    for s in range(n_nodes):
        for d in range(n_nodes):
            if s != d and d != (s + 1) % n_nodes and rng.random() < extra_link_prob:
                add(s, d)
    return Network(nodes=nodes, links=tuple(links))


def random_demands(rng: np.random.Generator, net: Network, n_flows: int,
                   max_rate_mbps: int = 10) -> list[FlowDemand]:
    """Best-effort demands (N = 0) with integer-Mbps rates, distinct ODs."""
    n = net.n_nodes
    ods: set[tuple[int, int]] = set()
    while len(ods) < n_flows:
        s, d = rng.choice(n, size=2, replace=False)
        ods.add((int(s), int(d)))
    demands = []
    for f, (s, d) in enumerate(sorted(ods)):
        demands.append(FlowDemand(
            flow_id=f, src=net.nodes[s], dst=net.nodes[d],
            max_rate_bps=float(rng.integers(1, max_rate_mbps + 1)) * 1e6,
        ))
    return demands


def all_simple_paths_dfs(net: Network, src: str, dst: str) -> list[Path]:
    """Every simple path from src to dst, by plain depth-first search."""
    found: list[Path] = []
    stack: list[int] = []
    visited = {src}

    def walk(node: str) -> None:
        if node == dst:
            cost = float(sum(net.links[i].cost for i in stack))
            found.append(Path(src=src, dst=dst, links=tuple(stack), cost=cost))
            return
        for link in net.out_links[node]:
            if link.dst in visited:
                continue
            visited.add(link.dst)
            stack.append(link.id)
            walk(link.dst)
            stack.pop()
            visited.discard(link.dst)

    walk(src)
    return found


def fd_max_rel_err(mlp: Mlp, x: np.ndarray, labels: np.ndarray,
                   dropout_seed=None, h: float = 1e-6) -> float:
    """Worst relative disagreement between analytic and central-difference
    gradients over every parameter of the net.

    The same dropout seed is passed to every loss evaluation, so the mask is
    held fixed while a parameter is perturbed; without that the difference
    quotient would measure mask churn, not the gradient.
    """
    _, gw, gb = loss_and_gradients(mlp, x, labels, dropout_seed=dropout_seed)
    analytic = gw + gb
    worst = 0.0
    for p, g in zip(mlp.weights + mlp.biases, analytic):
        flat = p.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            up, _, _ = loss_and_gradients(mlp, x, labels, dropout_seed=dropout_seed)
            flat[i] = keep - h
            down, _, _ = loss_and_gradients(mlp, x, labels, dropout_seed=dropout_seed)
            flat[i] = keep
            fd = (up - down) / (2.0 * h)
            a = g.reshape(-1)[i]
            rel = abs(a - fd) / max(abs(a), abs(fd), 1e-6)
            worst = max(worst, rel)
    return worst
