"""Synthetic traffic matrices, CSV interchange and the one-step predictor.

Demand synthesis is a gravity model (random node masses, rate proportional to
mass products) modulated over time by a sinusoid plus autoregressive noise.
The scale is chosen so that, if every demand rode its shortest path, mean link
utilization would sit at the configured fraction.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path as FsPath

import numpy as np

from .topology import Network, od_pairs, shortest_path

__all__ = [
    "TrafficError",
    "TrafficParams",
    "TmSequence",
    "FlowDemand",
    "generate_tm_sequence",
    "predict_next",
    "tm_to_demands",
    "save_tm_csv",
    "load_tm_csv",
    "mean_hop_count",
]


class TrafficError(ValueError):
    pass


@dataclass(frozen=True)
class TrafficParams:
    """Knobs for the synthetic generator.

    utilization: target mean link utilization under shortest-path routing.
    amplitude: relative size of the diurnal sinusoid (0 disables it).
    noise: stationary standard deviation of the AR(1) term, relative to the
        per-OD base rate (0 disables it).
    length: number of ticks to generate.
    period: sinusoid period in ticks.
    rho: AR(1) coefficient of the noise process.
    """

    utilization: float = 0.5
    amplitude: float = 0.3
    noise: float = 0.05
    length: int = 1000
    period: int = 288
    rho: float = 0.9

    def __post_init__(self) -> None:
        if not 0 < self.utilization <= 1:
            raise TrafficError("utilization must be in (0, 1]")
        if self.amplitude < 0 or self.amplitude > 1:
            raise TrafficError("amplitude must be in [0, 1]")
        if self.noise < 0:
            raise TrafficError("noise must be >= 0")
        if self.length < 1:
            raise TrafficError("length must be >= 1")
        if self.period < 2:
            raise TrafficError("period must be >= 2")
        if not 0 <= self.rho < 1:
            raise TrafficError("rho must be in [0, 1)")


@dataclass
class TmSequence:
    """A dense series of traffic matrices, one per tick starting at 0.

    rates has shape (T, n, n) in bits per second with a zero diagonal.
    """

    nodes: tuple[str, ...]
    rates: np.ndarray
    seed: int | None = None
    params: TrafficParams | None = None

    def __post_init__(self) -> None:
        self.rates = np.asarray(self.rates, dtype=np.float64)
        n = len(self.nodes)
        if self.rates.ndim != 3 or self.rates.shape[1:] != (n, n):
            raise TrafficError("rates must have shape (T, n, n)")
        if np.any(self.rates < 0):
            raise TrafficError("negative rate in traffic matrix")

    def __len__(self) -> int:
        return self.rates.shape[0]

    def tm(self, tick: int) -> np.ndarray:
        return self.rates[tick]


@dataclass(frozen=True)
class FlowDemand:
    """One unsplittable demand: requested max rate R and floor rate N."""

    flow_id: int
    src: str
    dst: str
    max_rate_bps: float
    min_rate_bps: float = 0.0

    def __post_init__(self) -> None:
        if self.max_rate_bps < 0 or self.min_rate_bps < 0:
            raise TrafficError(f"flow {self.flow_id}: negative rate")
        if self.min_rate_bps > self.max_rate_bps:
            raise TrafficError(f"flow {self.flow_id}: min rate above max rate")


def mean_hop_count(net: Network) -> float:
    """Mean shortest-path hop count over connected OD pairs."""
    hops = []
    for s, d in od_pairs(net):
        p = shortest_path(net, s, d)
        if p is not None:
            hops.append(len(p))
    if not hops:
        raise TrafficError("network has no connected OD pair")
    return float(np.mean(hops))


def generate_tm_sequence(net: Network, params: TrafficParams, seed: int) -> TmSequence:
    """Deterministic synthetic TM series for a topology.

    Per OD: rate(t) = base * (1 + amplitude*sin(2*pi*t/period))
                           * (1 + ar_noise(t)), clipped at zero.
    base comes from a gravity model scaled so mean link utilization under
    shortest-path routing equals params.utilization.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    n = net.n_nodes
    masses = rng.uniform(0.5, 1.5, size=n)
    base = np.outer(masses, masses)
    np.fill_diagonal(base, 0.0)

    hbar = mean_hop_count(net)
    total_cap = float(net.capacities.sum())
    n_od = n * (n - 1)
    target_mean = params.utilization * total_cap / (n_od * hbar)
    base *= target_mean / (base.sum() / n_od)

    t = np.arange(params.length, dtype=np.float64)
    season = 1.0 + params.amplitude * np.sin(2.0 * np.pi * t / params.period)

    rates = np.empty((params.length, n, n), dtype=np.float64)
    if params.noise > 0:
        # AR(1) with stationary std = params.noise, innovation-scaled so the
        # marginal distribution does not depend on rho.
        innov_sd = params.noise * np.sqrt(1.0 - params.rho**2)
        level = rng.standard_normal((n, n)) * params.noise
        for i in range(params.length):
            rates[i] = base * season[i] * (1.0 + level)
            level = params.rho * level + innov_sd * rng.standard_normal((n, n))
    else:
        for i in range(params.length):
            rates[i] = base * season[i]
    np.clip(rates, 0.0, None, out=rates)
    for i in range(params.length):
        np.fill_diagonal(rates[i], 0.0)
    return TmSequence(nodes=net.nodes, rates=rates, seed=seed, params=params)


def predict_next(window: np.ndarray) -> np.ndarray:
    """Extrapolate the next matrix from a history window.

    Fits an independent least-squares line per OD over the window and
    evaluates it one step past the end. Needs at least two matrices.
    Negative extrapolations are clipped to zero.
    """
    window = np.asarray(window, dtype=np.float64)
    if window.ndim != 3:
        raise TrafficError("window must have shape (W, n, n)")
    w = window.shape[0]
    if w < 2:
        raise TrafficError("prediction needs a window of at least 2 matrices")
    t = np.arange(w, dtype=np.float64)
    t_mean = t.mean()
    x_mean = window.mean(axis=0)
    t_dev = t - t_mean
    slope = np.tensordot(t_dev, window - x_mean, axes=(0, 0)) / np.sum(t_dev**2)
    pred = x_mean + slope * (w - t_mean)
    np.clip(pred, 0.0, None, out=pred)
    np.fill_diagonal(pred, 0.0)
    return pred


def tm_to_demands(tm: np.ndarray, net: Network, min_fraction: float = 0.0) -> list[FlowDemand]:
    """One demand per OD pair with positive rate, in canonical slot order.

    Flow ids are the OD slot indices, so a demand list and a label vector
    line up without bookkeeping. min_fraction sets the floor rate N as a
    fraction of the requested rate (default 0: best effort).
    """
    if not 0 <= min_fraction <= 1:
        raise TrafficError("min_fraction must be in [0, 1]")
    tm = np.asarray(tm, dtype=np.float64)
    n = net.n_nodes
    if tm.shape != (n, n):
        raise TrafficError(f"traffic matrix shape {tm.shape} does not match {n} nodes")
    if np.any(tm < 0):
        raise TrafficError("negative rate in traffic matrix")
    if np.any(np.diagonal(tm) != 0):
        raise TrafficError("traffic matrix has non-zero diagonal")
    demands = []
    for slot, (s, d) in enumerate(od_pairs(net)):
        rate = float(tm[net.node_index[s], net.node_index[d]])
        if rate > 0:
            demands.append(
                FlowDemand(
                    flow_id=slot,
                    src=s,
                    dst=d,
                    max_rate_bps=rate,
                    min_rate_bps=min_fraction * rate,
                )
            )
    return demands


# ---------------------------------------------------------------------------
# CSV interchange: rows of `t,src,dst,rate_bps`, ticks contiguous from 0.

def save_tm_csv(seq: TmSequence, path: str | FsPath) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "src", "dst", "rate_bps"])
        idx = {name: i for i, name in enumerate(seq.nodes)}
        for t in range(len(seq)):
            tm = seq.rates[t]
            for s in seq.nodes:
                for d in seq.nodes:
                    if s == d:
                        continue
                    rate = tm[idx[s], idx[d]]
                    if rate > 0:
                        writer.writerow([t, s, d, repr(float(rate))])


def load_tm_csv(path: str | FsPath, net: Network) -> TmSequence:
    by_tick: dict[int, np.ndarray] = {}
    n = net.n_nodes
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["t", "src", "dst", "rate_bps"]:
            raise TrafficError(f"{path}: expected header t,src,dst,rate_bps")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                t = int(row[0])
                rate = float(row[3])
            except (IndexError, ValueError) as exc:
                raise TrafficError(f"{path}:{lineno}: bad row {row!r}") from exc
            s, d = row[1], row[2]
            if s not in net.node_index or d not in net.node_index:
                raise TrafficError(f"{path}:{lineno}: unknown node in {s!r}->{d!r}")
            if s == d:
                raise TrafficError(f"{path}:{lineno}: rate on the diagonal")
            if rate < 0:
                raise TrafficError(f"{path}:{lineno}: negative rate")
            if t < 0:
                raise TrafficError(f"{path}:{lineno}: negative tick")
            tm = by_tick.setdefault(t, np.zeros((n, n), dtype=np.float64))
            tm[net.node_index[s], net.node_index[d]] = rate
    if not by_tick:
        raise TrafficError(f"{path}: no data rows")
    ticks = sorted(by_tick)
    if ticks != list(range(len(ticks))):
        raise TrafficError(f"{path}: ticks not contiguous from 0 (got {ticks[:5]}...)")
    rates = np.stack([by_tick[t] for t in ticks])
    return TmSequence(nodes=net.nodes, rates=rates)
