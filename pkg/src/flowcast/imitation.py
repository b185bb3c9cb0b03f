"""Turning routing runs into supervised learning material.

A sample pairs one tick's encoded (traffic matrix, link availabilities)
vector with the heuristic's path choices, one label per OD pair. Datasets
carry enough header material (topology hash, k, split sizes) to refuse
mismatched models later, and serialize to either a compact binary layout
or CSV. Hashes exclude measured solve times, so two runs of the same
configuration agree bit for bit even though their clocks differ.
"""

from __future__ import annotations

import csv
import hashlib
import io
import logging
import os
import struct
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path as FsPath

import numpy as np

from .flowsolve import (
    InfeasibleDemandError,
    RoutingDecision,
    SolverConfig,
    baseline_heuristic,
    decision_from_paths,
)
from .neuralnet import Mlp, forward, normalize_input
from .topology import (
    CandidateTable,
    Network,
    NetworkState,
    Path,
    build_candidate_table,
    initial_state,
    od_pairs,
)
from .traffic import TmSequence, tm_to_demands

__all__ = [
    "Sample",
    "Dataset",
    "EvalMetrics",
    "encode_input",
    "encode_labels",
    "decode_indices",
    "decode_paths",
    "generate_dataset",
    "dataset_hash",
    "save_dataset",
    "load_dataset",
    "evaluate_model",
    "solver_config_hash",
]

log = logging.getLogger(__name__)

_DS_MAGIC = b"FCDS\x00"
_DS_VERSION = 1


@dataclass
class Sample:
    """One tick's worth of teacher output.

    input is the normalized (TM off-diagonal, link availability) vector;
    labels holds the chosen candidate index per OD slot; active marks slots
    that carried demand and were actually routed. scale restores physical
    units (bps); bh_ms is the heuristic's wall time, kept out of hashes.
    """

    input: np.ndarray
    labels: np.ndarray
    active: np.ndarray
    tick: int
    scale: float
    bh_ms: float
    bh_throughput_bps: float


@dataclass
class Dataset:
    network: Network
    table: CandidateTable
    samples: tuple[Sample, ...]
    n_train: int
    n_test: int
    provenance: str = ""

    @property
    def k(self) -> int:
        return self.table.k

    @property
    def n_od(self) -> int:
        return self.network.n_nodes * (self.network.n_nodes - 1)

    @property
    def dim_in(self) -> int:
        return self.n_od + self.network.n_links

    @property
    def dim_out(self) -> int:
        return self.n_od * self.table.k

    def arrays(self, split: str = "train") -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(inputs, labels, active) matrices for 'train', 'test' or 'all'."""
        if split == "train":
            part = self.samples[:self.n_train]
        elif split == "test":
            part = self.samples[self.n_train:self.n_train + self.n_test]
        elif split == "all":
            part = self.samples
        else:
            raise ValueError(f"unknown split {split!r}")
        if not part:
            dim = self.dim_in
            return (np.zeros((0, dim)), np.zeros((0, self.n_od), dtype=np.int64),
                    np.zeros((0, self.n_od), dtype=bool))
        x = np.stack([s.input for s in part])
        y = np.stack([s.labels for s in part]).astype(np.int64)
        active = np.stack([s.active for s in part]).astype(bool)
        return x, y, active


def solver_config_hash(config: SolverConfig, k: int | None = None) -> str:
    """Short stable identifier of the teacher configuration."""
    payload = (
        f"eps={config.epsilon!r};k={k if k is not None else config.k_paths!r};"
        f"iters={config.max_iterations!r};slack={config.cost_slack!r};"
        f"minfrac={config.min_rate_fraction!r}"
    )
    return hashlib.sha256(payload.encode()).hexdigest()[:12]


def encode_input(tm: np.ndarray, state: NetworkState) -> tuple[np.ndarray, float]:
    """Flatten and normalize one routing input.

    Off-diagonal TM entries in canonical OD order, then per-link available
    capacity in link-id order, divided by the vector maximum. Returns the
    normalized vector and the divisor (1.0 for an all-zero input).
    """
    net = state.network
    n = net.n_nodes
    tm = np.asarray(tm, dtype=np.float64)
    if tm.shape != (n, n):
        raise ValueError(f"traffic matrix shape {tm.shape} does not match "
                         f"{n} nodes")
    off = ~np.eye(n, dtype=bool)
    vec = np.concatenate([tm[off], state.available_bps])
    return normalize_input(vec)


def _label_maps(table: CandidateTable) -> dict[tuple[str, str], dict[tuple, int]]:
    return {
        od: {p.links: i for i, p in enumerate(paths)}
        for od, paths in table.paths.items()
    }


def encode_labels(
    decision: RoutingDecision,
    table: CandidateTable,
    maps: dict | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Candidate index per OD slot, plus the active mask.

    Slots with no demand or an unrouted flow get label 0 and are inactive.
    A routed path that is not in its OD's candidate list means the decision
    came from a different table and raises ValueError.
    """
    net = table.network
    ods = od_pairs(net)
    if maps is None:
        maps = _label_maps(table)
    labels = np.zeros(len(ods), dtype=np.int64)
    active = np.zeros(len(ods), dtype=bool)
    slot = {od: i for i, od in enumerate(ods)}
    for route in decision.routes:
        od = (route.demand.src, route.demand.dst)
        i = slot.get(od)
        if i is None:
            raise ValueError(f"decision routes unknown OD pair {od}")
        if route.path is None or route.rate_bps <= 0:
            continue
        idx = maps.get(od, {}).get(route.path.links)
        if idx is None:
            raise ValueError(
                f"path {route.path.links} for OD {od} is not in the "
                f"candidate table (k={table.k}); config mismatch")
        labels[i] = idx
        active[i] = True
    return labels, active


def decode_indices(output: np.ndarray, group_size: int) -> np.ndarray:
    """Argmax per group of k; ties go to the lowest index."""
    output = np.asarray(output)
    if output.ndim != 1 or output.size % group_size:
        raise ValueError(f"output of size {output.size} does not divide into "
                         f"groups of {group_size}")
    return output.reshape(-1, group_size).argmax(axis=1)


def decode_paths(output: np.ndarray, table: CandidateTable) -> list[Path | None]:
    """Chosen candidate Path per OD slot (None where the table is empty)."""
    net = table.network
    ods = od_pairs(net)
    idx = decode_indices(output, table.k)
    if len(idx) != len(ods):
        raise ValueError(f"output decodes to {len(idx)} groups, expected "
                         f"{len(ods)} OD slots")
    chosen: list[Path | None] = []
    for i, od in enumerate(ods):
        cands = table.for_od(*od)
        if not cands:
            chosen.append(None)
            continue
        j = min(int(idx[i]), len(cands) - 1)
        chosen.append(cands[j])
    return chosen


# ---------------------------------------------------------------------------
# generation

def _make_sample(
    net: Network,
    tm: np.ndarray,
    tick: int,
    config: SolverConfig,
    table: CandidateTable,
    maps: dict,
) -> Sample | None:
    state = initial_state(net, timestamp=tick)
    try:
        decision, secs = baseline_heuristic(net, state, tm, config, table=table)
    except InfeasibleDemandError as exc:
        log.warning("tick %d skipped: %s", tick, exc)
        return None
    vec, scale = encode_input(tm, state)
    labels, active = encode_labels(decision, table, maps=maps)
    return Sample(
        input=vec, labels=labels, active=active, tick=tick, scale=scale,
        bh_ms=secs * 1000.0, bh_throughput_bps=decision.throughput_bps,
    )


def _worker_chunk(args) -> list[tuple[int, Sample | None]]:
    net, seq, config, ticks = args
    table = build_candidate_table(net, config.k_paths)
    maps = _label_maps(table)
    return [(t, _make_sample(net, seq.tm(t), t, config, table, maps))
            for t in ticks]


def generate_dataset(
    net: Network,
    seq: TmSequence,
    config: SolverConfig,
    table: CandidateTable | None = None,
    train_fraction: float = 0.7,
    workers: int | None = None,
) -> Dataset:
    """Run the heuristic over every tick of a sequence and encode the results.

    Ticks are independent, so the work can fan out over processes; the
    sample order (and thus the dataset hash) does not depend on the worker
    count. workers=None reads NEUROUTE_THREADS, defaulting to serial.
    Infeasible ticks are skipped with a logged reason.
    """
    if len(seq) == 0:
        raise ValueError("empty traffic sequence")
    if not 0 <= train_fraction <= 1:
        raise ValueError("train_fraction must be in [0, 1]")
    if table is None:
        table = build_candidate_table(net, config.k_paths)
    if workers is None:
        workers = int(os.environ.get("NEUROUTE_THREADS", "1") or "1")
    ticks = list(range(len(seq)))

    results: list[tuple[int, Sample | None]] = []
    if workers > 1 and len(ticks) > 1:
        n_chunks = min(workers * 4, len(ticks))
        chunks = [ticks[i::n_chunks] for i in range(n_chunks)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for part in pool.map(_worker_chunk,
                                 [(net, seq, config, c) for c in chunks]):
                results.extend(part)
        results.sort(key=lambda r: r[0])
    else:
        maps = _label_maps(table)
        for t in ticks:
            results.append((t, _make_sample(net, seq.tm(t), t, config, table,
                                            maps)))

    samples = tuple(s for _, s in results if s is not None)
    n_train = int(round(train_fraction * len(samples)))
    return Dataset(
        network=net, table=table, samples=samples,
        n_train=n_train, n_test=len(samples) - n_train,
        provenance=solver_config_hash(config, k=table.k),
    )


# ---------------------------------------------------------------------------
# serialization

def _canonical_bytes(ds: Dataset, with_timing: bool) -> bytes:
    buf = io.BytesIO()
    buf.write(_DS_MAGIC)
    buf.write(struct.pack("<H", _DS_VERSION))
    buf.write(bytes.fromhex(ds.network.content_hash))
    prov = ds.provenance.encode()
    buf.write(struct.pack(
        "<IIIIQQQH",
        ds.network.n_nodes, ds.network.n_links, ds.k, ds.n_od,
        len(ds.samples), ds.n_train, ds.n_test, len(prov),
    ))
    buf.write(prov)
    for s in ds.samples:
        bh_ms = s.bh_ms if with_timing else 0.0
        buf.write(struct.pack("<qddd", s.tick, s.scale, bh_ms,
                              s.bh_throughput_bps))
        buf.write(np.ascontiguousarray(s.input, dtype="<f8").tobytes())
        buf.write(np.ascontiguousarray(s.labels, dtype="<u2").tobytes())
        buf.write(np.ascontiguousarray(s.active, dtype="<u1").tobytes())
    return buf.getvalue()


def dataset_hash(ds: Dataset) -> str:
    """Content hash over everything except measured solve times."""
    return hashlib.sha256(_canonical_bytes(ds, with_timing=False)).hexdigest()


def save_dataset(ds: Dataset, path: str | FsPath, fmt: str = "binary") -> None:
    if fmt == "binary":
        with open(path, "wb") as fh:
            fh.write(_canonical_bytes(ds, with_timing=True))
    elif fmt == "csv":
        _save_dataset_csv(ds, path)
    else:
        raise ValueError(f"unknown dataset format {fmt!r}")


def _save_dataset_csv(ds: Dataset, path: str | FsPath) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# flowcast-dataset v{_DS_VERSION}\n")
        fh.write(f"# topology {ds.network.content_hash}\n")
        fh.write(f"# nodes {ds.network.n_nodes} links {ds.network.n_links} "
                 f"k {ds.k}\n")
        fh.write(f"# samples {len(ds.samples)} train {ds.n_train} "
                 f"test {ds.n_test}\n")
        fh.write(f"# provenance {ds.provenance}\n")
        w = csv.writer(fh)
        w.writerow(["tick", "scale", "bh_ms", "bh_throughput_bps",
                    "input", "labels", "active"])
        for s in ds.samples:
            w.writerow([
                s.tick, repr(float(s.scale)), repr(float(s.bh_ms)),
                repr(float(s.bh_throughput_bps)),
                ";".join(repr(float(v)) for v in s.input),
                ";".join(str(int(v)) for v in s.labels),
                ";".join("1" if v else "0" for v in s.active),
            ])


def load_dataset(path: str | FsPath, net: Network) -> Dataset:
    """Read a dataset back; the topology must hash-match the one given."""
    with open(path, "rb") as fh:
        head = fh.read(len(_DS_MAGIC))
        if head == _DS_MAGIC:
            return _load_dataset_binary(fh, net)
    return _load_dataset_csv(path, net)


def _check_topo(stored_hex: str, net: Network, origin: str) -> None:
    if stored_hex != net.content_hash:
        raise ValueError(
            f"{origin}: dataset topology hash {stored_hex[:12]}... does not "
            f"match the given network ({net.content_hash[:12]}...)")


def _read_exact(fh, n: int) -> bytes:
    blob = fh.read(n)
    if len(blob) != n:
        raise ValueError("dataset file is truncated")
    return blob


def _load_dataset_binary(fh, net: Network) -> Dataset:
    (version,) = struct.unpack("<H", _read_exact(fh, 2))
    if version != _DS_VERSION:
        raise ValueError(f"unsupported dataset version {version}")
    topo_hex = _read_exact(fh, 32).hex()
    _check_topo(topo_hex, net, "binary dataset")
    n_nodes, n_links, k, n_od, n_samples, n_train, n_test, prov_len = \
        struct.unpack("<IIIIQQQH", _read_exact(fh, 4 * 4 + 8 * 3 + 2))
    if (n_nodes, n_links) != (net.n_nodes, net.n_links):
        raise ValueError("dataset dimensions do not match the network")
    provenance = _read_exact(fh, prov_len).decode()
    dim_in = n_od + n_links
    samples = []
    for _ in range(n_samples):
        tick, scale, bh_ms, bh_thr = struct.unpack("<qddd", _read_exact(fh, 8 * 4))
        vec = np.frombuffer(_read_exact(fh, 8 * dim_in), dtype="<f8").copy()
        labels = np.frombuffer(_read_exact(fh, 2 * n_od), dtype="<u2").astype(np.int64)
        active = np.frombuffer(_read_exact(fh, 1 * n_od), dtype="<u1").astype(bool)
        samples.append(Sample(
            input=vec, labels=labels, active=active, tick=tick, scale=scale,
            bh_ms=bh_ms, bh_throughput_bps=bh_thr,
        ))
    trailing = fh.read(1)
    if trailing:
        raise ValueError("trailing bytes after the last sample")
    table = build_candidate_table(net, int(k))
    return Dataset(network=net, table=table, samples=tuple(samples),
                   n_train=int(n_train), n_test=int(n_test),
                   provenance=provenance)


def _load_dataset_csv(path: str | FsPath, net: Network) -> Dataset:
    meta: dict[str, str] = {}
    rows = []
    with open(path, newline="") as fh:
        pos = fh.tell()
        line = fh.readline()
        while line.startswith("#"):
            parts = line[1:].split()
            # comment lines hold alternating key/value tokens
            for i in range(0, len(parts) - 1, 2):
                meta[parts[i]] = parts[i + 1]
            pos = fh.tell()
            line = fh.readline()
        fh.seek(pos)
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["tick", "scale", "bh_ms", "bh_throughput_bps",
                      "input", "labels", "active"]:
            raise ValueError(f"unrecognized dataset CSV header in {path}")
        rows = list(reader)
    if "topology" in meta:
        _check_topo(meta["topology"], net, "csv dataset")
    k = int(meta.get("k", "5"))
    samples = []
    for row in rows:
        tick, scale, bh_ms, bh_thr, vec_s, lab_s, act_s = row
        samples.append(Sample(
            input=np.array([float(v) for v in vec_s.split(";")]),
            labels=np.array([int(v) for v in lab_s.split(";")], dtype=np.int64),
            active=np.array([v == "1" for v in act_s.split(";")]),
            tick=int(tick), scale=float(scale), bh_ms=float(bh_ms),
            bh_throughput_bps=float(bh_thr),
        ))
    n_total = len(samples)
    n_train = int(meta.get("train", n_total))
    n_test = n_total - n_train
    table = build_candidate_table(net, k)
    return Dataset(network=net, table=table, samples=tuple(samples),
                   n_train=n_train, n_test=n_test,
                   provenance=meta.get("provenance", ""))


# ---------------------------------------------------------------------------
# evaluation

@dataclass
class EvalMetrics:
    accuracy: float
    exact_match_rate: float
    throughput_ratio: float
    mean_infer_ms: float
    mean_bh_ms: float
    n_samples: int


def _demands_from_input(sample: Sample, net: Network):
    n = net.n_nodes
    rates = sample.input[:n * (n - 1)] * sample.scale
    tm = np.zeros((n, n))
    off = ~np.eye(n, dtype=bool)
    tm[off] = rates
    return tm


def evaluate_model(
    model: Mlp,
    ds: Dataset,
    split: str = "test",
) -> EvalMetrics:
    """Model quality and speed on a dataset split.

    Accuracy counts active OD slots whose decoded candidate equals the
    teacher's; the throughput ratio re-routes each sample's demands along
    the model's choices (with the engine's clipping rules) and divides by
    the teacher's throughput. Inference time covers forward pass, decode,
    and rate assignment.
    """
    net = ds.network
    x, labels, active = ds.arrays(split)
    if x.shape[0] == 0:
        raise ValueError(f"split {split!r} is empty")
    if x.shape[1] != model.sizes[0]:
        raise ValueError(f"model expects input {model.sizes[0]}, dataset "
                         f"has {x.shape[1]}")
    if model.sizes[-1] != ds.dim_out:
        raise ValueError(f"model output {model.sizes[-1]} != dataset "
                         f"{ds.dim_out}")
    offset = {"train": 0, "test": ds.n_train, "all": 0}[split]
    hits = 0
    total_active = 0
    exact = 0
    ratios = []
    infer_ms = []
    bh_ms = []
    for i in range(x.shape[0]):
        s = ds.samples[offset + i]
        t0 = time.perf_counter()
        out = forward(model, x[i])
        idx = decode_indices(out, ds.k)
        tm = _demands_from_input(s, net)
        state = NetworkState(
            network=net,
            available_bps=s.input[ds.n_od:] * s.scale,
            cost_ms=net.costs.copy(),
            timestamp=s.tick,
        )
        demands = tm_to_demands(tm, net)
        choice = {d.flow_id: int(idx[d.flow_id]) for d in demands}
        decision, _ = decision_from_paths(net, state, demands, choice, ds.table)
        infer_ms.append((time.perf_counter() - t0) * 1000.0)

        act = active[i]
        n_act = int(act.sum())
        total_active += n_act
        ok = idx[act] == labels[i][act]
        hits += int(ok.sum())
        if n_act == 0 or bool(ok.all()):
            exact += 1
        if s.bh_throughput_bps > 0:
            ratios.append(decision.throughput_bps / s.bh_throughput_bps)
        else:
            ratios.append(1.0)
        bh_ms.append(s.bh_ms)
    return EvalMetrics(
        accuracy=(hits / total_active) if total_active else 1.0,
        exact_match_rate=exact / x.shape[0],
        throughput_ratio=float(np.mean(ratios)),
        mean_infer_ms=float(np.mean(infer_ms)),
        mean_bh_ms=float(np.mean(bh_ms)),
        n_samples=x.shape[0],
    )
