"""Command-line front end for the routing pipeline.

Every subcommand writes its artifacts into --out together with a JSON
manifest recording the resolved configuration, a config hash, library
versions, and per-artifact SHA-256 digests. Artifacts that embed wall-clock
measurements are marked `timing` in the manifest; the remaining artifacts
are byte-reproducible from the same config and seed.

Config file: INI sections [traffic], [solver], [train], [engine]; explicit
command-line flags win over file values.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import platform
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .engine import (
    EngineConfig,
    compare_with_bh,
    run_scenario,
    write_compare_csv,
    write_tick_csv,
)
from .flowsolve import SolverConfig
from .imitation import (
    dataset_hash,
    evaluate_model,
    generate_dataset,
    load_dataset,
    save_dataset,
    solver_config_hash,
)
from .neuralnet import TrainConfig, init_mlp, load_model, save_model, train
from .topology import (
    TopologyError,
    builtin_topology,
    build_candidate_table,
    load_topology,
)
from .traffic import (
    TrafficError,
    TrafficParams,
    generate_tm_sequence,
    load_tm_csv,
    save_tm_csv,
)

_BUILTIN_TOPOS = ("geant", "triangle")


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # bad usage exits 2 with a single-line reason, matching our own errors
    def error(self, message):
        self.exit(2, f"error: {message}\n")


# ---------------------------------------------------------------------------
# config plumbing

def _load_net(spec: str):
    if spec in _BUILTIN_TOPOS:
        return builtin_topology(spec)
    p = Path(spec)
    if not p.exists():
        raise CliError(f"topology {spec!r} is neither a builtin "
                       f"({', '.join(_BUILTIN_TOPOS)}) nor a file")
    return load_topology(p)


def _read_ini(path: str | None) -> dict[str, dict[str, str]]:
    if path is None:
        return {}
    if not Path(path).exists():
        raise CliError(f"config file {path} does not exist")
    cp = configparser.ConfigParser()
    cp.read(path)
    return {s: dict(cp[s]) for s in cp.sections()}


def _pick(flag, ini_section: dict[str, str], key: str, cast, default):
    """Flag value if given, else config-file value, else default."""
    if flag is not None:
        return flag
    if key in ini_section:
        raw = ini_section[key]
        try:
            return cast(raw)
        except ValueError as exc:
            raise CliError(f"config value {key} = {raw!r}: {exc}") from exc
    return default


def _traffic_params(args, ini) -> TrafficParams:
    sec = ini.get("traffic", {})
    try:
        return TrafficParams(
            utilization=_pick(args.utilization, sec, "utilization", float, 0.5),
            amplitude=_pick(args.amplitude, sec, "amplitude", float, 0.3),
            noise=_pick(args.noise, sec, "noise", float, 0.05),
            length=_pick(args.length, sec, "length", int, 1000),
            period=_pick(args.period, sec, "period", int, 288),
            rho=_pick(None, sec, "rho", float, 0.9),
        )
    except TrafficError as exc:
        raise CliError(str(exc)) from exc


def _solver_config(args, ini) -> SolverConfig:
    sec = ini.get("solver", {})
    max_it = _pick(getattr(args, "max_iterations", None), sec,
                   "max_iterations", int, None)
    try:
        return SolverConfig(
            epsilon=_pick(args.epsilon, sec, "epsilon", float, 0.05),
            k_paths=_pick(args.k_paths, sec, "k_paths", int, 5),
            max_iterations=max_it,
            cost_slack=_pick(None, sec, "cost_slack", float, 0.01),
            min_rate_fraction=_pick(None, sec, "min_rate_fraction", float, 0.0),
        )
    except ValueError as exc:
        raise CliError(str(exc)) from exc


def _train_config(args, ini) -> TrainConfig:
    sec = ini.get("train", {})
    try:
        return TrainConfig(
            lr=_pick(args.lr, sec, "lr", float, 0.001),
            batch_size=_pick(args.batch, sec, "batch_size", int, 100),
            epochs=_pick(args.epochs, sec, "epochs", int, 100),
            dropout=_pick(args.dropout, sec, "dropout", float, 0.5),
            seed=_pick(args.seed, sec, "seed", int, 0),
            target_accuracy=_pick(args.target_accuracy, sec,
                                  "target_accuracy", float, None),
            budget_seconds=_pick(getattr(args, "budget_seconds", None), sec,
                                 "budget_seconds", float, None),
        )
    except ValueError as exc:
        raise CliError(str(exc)) from exc


def _engine_config(args, ini, solver: SolverConfig) -> EngineConfig:
    sec = ini.get("engine", {})
    try:
        return EngineConfig(
            window=_pick(args.window, sec, "window", int, 10),
            fallback_threshold=_pick(args.fallback_threshold, sec,
                                     "fallback_threshold", float, 0.10),
            solver=solver,
        )
    except ValueError as exc:
        raise CliError(str(exc)) from exc


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out: Path, command: str, config: dict,
                    artifacts: dict[str, bool], seed: int | None = None,
                    extra: dict | None = None) -> None:
    """artifacts maps file name (relative to out) -> is_timing_artifact."""
    canon = json.dumps(config, sort_keys=True, default=str)
    manifest = {
        "command": command,
        "seed": seed,
        "config": config,
        "config_hash": hashlib.sha256(canon.encode()).hexdigest()[:16],
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "flowcast": __version__,
        },
        "artifacts": {
            name: {"sha256": _sha256(out / name), "timing": timing}
            for name, timing in sorted(artifacts.items())
        },
    }
    if extra:
        manifest.update(extra)
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# subcommands

def _cmd_gen_traffic(args) -> int:
    net = _load_net(args.topo)
    ini = _read_ini(args.config)
    params = _traffic_params(args, ini)
    seed = args.seed if args.seed is not None else 0
    seq = generate_tm_sequence(net, params, seed=seed)
    out = _out_dir(args)
    save_tm_csv(seq, out / "tm.csv")
    _write_manifest(out, "gen-traffic",
                    {"topology": net.content_hash, **asdict(params)},
                    {"tm.csv": False}, seed=seed)
    print(f"wrote {out / 'tm.csv'} ({params.length} ticks, "
          f"{net.n_nodes} nodes)")
    return 0


def _cmd_gen_dataset(args) -> int:
    net = _load_net(args.topo)
    ini = _read_ini(args.config)
    solver = _solver_config(args, ini)
    seq = load_tm_csv(args.tm, net)
    table = build_candidate_table(net, solver.k_paths)
    ds = generate_dataset(net, seq, solver, table=table,
                          train_fraction=args.train_fraction)
    out = _out_dir(args)
    name = "dataset.csv" if args.format == "csv" else "dataset.bin"
    save_dataset(ds, out / name, fmt=args.format)
    _write_manifest(
        out, "gen-dataset",
        {"topology": net.content_hash, "tm": str(args.tm),
         "train_fraction": args.train_fraction, **asdict(solver)},
        # the stored file embeds solve times; the content hash below is the
        # reproducible identity
        {name: True},
        extra={"dataset_hash": dataset_hash(ds),
               "solver_hash": solver_config_hash(solver)},
    )
    print(f"wrote {out / name}: {len(ds.samples)} samples "
          f"({ds.n_train} train / {ds.n_test} test), "
          f"hash {dataset_hash(ds)[:16]}")
    return 0


def _cmd_train(args) -> int:
    net = _load_net(args.topo)
    ini = _read_ini(args.config)
    tc = _train_config(args, ini)
    ds = load_dataset(args.dataset, net)
    layers = args.layers if args.layers is not None else 6
    hidden = args.hidden if args.hidden is not None else 100
    sizes = [ds.dim_in] + [hidden] * layers + [ds.dim_out]
    mlp = init_mlp(sizes, ds.k, seed=tc.seed, dropout=tc.dropout,
                   topology_hash=net.content_hash)
    x, y, _ = ds.arrays("train")
    if ds.n_test > 0:
        ex, ey, ea = ds.arrays("test")
    else:
        ex = ey = ea = None
    history = train(mlp, x, y, tc, eval_x=ex, eval_labels=ey, eval_active=ea)
    out = _out_dir(args)
    save_model(mlp, str(out / "model.bin"))
    with open(out / "history.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss", "msr", "accuracy"])
        for m in history:
            w.writerow([m.epoch, repr(m.loss), repr(m.msr), repr(m.accuracy)])
    with open(out / "history_timing.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "seconds"])
        for m in history:
            w.writerow([m.epoch, repr(m.seconds)])
    _write_manifest(
        out, "train",
        {"topology": net.content_hash, "dataset": str(args.dataset),
         "sizes": sizes, **asdict(tc)},
        {"model.bin": False, "history.csv": False, "history_timing.csv": True},
        seed=tc.seed,
    )
    last = history[-1] if history else None
    if last is not None:
        print(f"trained {len(history)} epochs; final accuracy "
              f"{last.accuracy:.4f}, msr {last.msr:.6f}")
    else:
        print("epochs 0: saved the initialized model unchanged")
    return 0


def _cmd_eval(args) -> int:
    net = _load_net(args.topo)
    ds = load_dataset(args.dataset, net)
    mlp = load_model(args.model)
    if mlp.topology_hash and mlp.topology_hash != net.content_hash:
        raise CliError(
            f"model topology hash {mlp.topology_hash[:12]}... does not match "
            f"the dataset's topology {net.content_hash[:12]}...")
    try:
        metrics = evaluate_model(mlp, ds, split=args.split)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    out = _out_dir(args)
    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["accuracy", "exact_match_rate", "throughput_ratio",
                    "n_samples"])
        w.writerow([repr(metrics.accuracy), repr(metrics.exact_match_rate),
                    repr(metrics.throughput_ratio), metrics.n_samples])
    with open(out / "metrics_timing.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["mean_infer_ms", "mean_bh_ms"])
        w.writerow([repr(metrics.mean_infer_ms), repr(metrics.mean_bh_ms)])
    _write_manifest(
        out, "eval",
        {"topology": net.content_hash, "dataset": str(args.dataset),
         "model": str(args.model), "split": args.split},
        {"metrics.csv": False, "metrics_timing.csv": True},
    )
    print(f"accuracy {metrics.accuracy:.4f}, exact-match "
          f"{metrics.exact_match_rate:.4f}, throughput ratio "
          f"{metrics.throughput_ratio:.4f} over {metrics.n_samples} samples")
    return 0


def _model_and_table(args, net, solver: SolverConfig):
    mlp = load_model(args.model)
    if mlp.topology_hash and mlp.topology_hash != net.content_hash:
        raise CliError(
            f"model topology hash {mlp.topology_hash[:12]}... does not match "
            f"topology {net.content_hash[:12]}...")
    n_od = net.n_nodes * (net.n_nodes - 1)
    if mlp.sizes[-1] % n_od:
        raise CliError(f"model output {mlp.sizes[-1]} does not divide into "
                       f"{n_od} OD slots")
    k = mlp.sizes[-1] // n_od
    if k != solver.k_paths:
        if args.k_paths is not None:
            raise CliError(f"--k-paths {solver.k_paths} contradicts the "
                           f"model's k={k}")
        solver = SolverConfig(
            epsilon=solver.epsilon, k_paths=k,
            max_iterations=solver.max_iterations,
            cost_slack=solver.cost_slack,
            min_rate_fraction=solver.min_rate_fraction)
    return mlp, build_candidate_table(net, solver.k_paths), solver


def _cmd_route_sim(args) -> int:
    net = _load_net(args.topo)
    ini = _read_ini(args.config)
    solver = _solver_config(args, ini)
    mlp, table, solver = _model_and_table(args, net, solver)
    engine = _engine_config(args, ini, solver)
    seq = load_tm_csv(args.tm, net)
    try:
        reports = run_scenario(net, seq, mlp, engine, table=table,
                               max_ticks=args.max_ticks)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    out = _out_dir(args)
    write_tick_csv(reports, out / "ticks.csv")
    _write_manifest(
        out, "route-sim",
        {"topology": net.content_hash, "tm": str(args.tm),
         "model": str(args.model), "window": engine.window,
         "fallback_threshold": engine.fallback_threshold,
         **asdict(engine.solver)},
        {"ticks.csv": True},
    )
    thr = np.mean([r.throughput_bps for r in reports])
    fb = sum(1 for r in reports if r.whole_tick_fallback)
    print(f"{len(reports)} ticks, mean throughput {thr / 1e6:.2f} Mbps, "
          f"{fb} whole-tick fallbacks")
    return 0


def _cmd_bench(args) -> int:
    net = _load_net(args.topo)
    ini = _read_ini(args.config)
    solver = _solver_config(args, ini)
    mlp, table, solver = _model_and_table(args, net, solver)
    engine = _engine_config(args, ini, solver)
    seq = load_tm_csv(args.tm, net)
    try:
        rows, summary = compare_with_bh(net, seq, mlp, engine, table=table,
                                        max_ticks=args.max_ticks)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    out = _out_dir(args)
    write_compare_csv(rows, out / "compare.csv")
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        fields = ["n_ticks", "accuracy", "throughput_ratio", "mean_infer_ms",
                  "mean_bh_ms", "p50_infer_ms", "p50_bh_ms", "p90_infer_ms",
                  "p90_bh_ms", "speedup", "fallback_ticks"]
        w.writerow(fields)
        w.writerow([repr(v) if isinstance(v := getattr(summary, f), float)
                    else v for f in fields])
    _write_manifest(
        out, "bench",
        {"topology": net.content_hash, "tm": str(args.tm),
         "model": str(args.model), "window": engine.window,
         **asdict(engine.solver)},
        {"compare.csv": True, "summary.csv": True},
    )
    print(f"{summary.n_ticks} ticks: accuracy {summary.accuracy:.4f}, "
          f"throughput ratio {summary.throughput_ratio:.4f}, "
          f"infer {summary.mean_infer_ms:.2f} ms vs heuristic "
          f"{summary.mean_bh_ms:.2f} ms ({summary.speedup:.1f}x)")
    return 0


def _parse_axis(value: str, cast):
    """'1..8' -> inclusive range; 'a,b,c' -> list; plain scalar -> [scalar]."""
    value = value.strip()
    if ".." in value:
        lo, hi = value.split("..", 1)
        try:
            lo, hi = int(lo), int(hi)
        except ValueError as exc:
            raise CliError(f"range bounds must be integers: {value!r}") from exc
        if hi < lo:
            raise CliError(f"empty range {value!r}")
        return [cast(v) for v in range(lo, hi + 1)]
    try:
        return [cast(v) for v in value.split(",")]
    except ValueError as exc:
        raise CliError(f"cannot parse sweep values {value!r}") from exc


def _cmd_sweep(args) -> int:
    net = _load_net(args.topo)
    ini = _read_ini(args.config)
    ds = load_dataset(args.dataset, net)

    axes = {}
    if args.layers is not None:
        axes["layers"] = _parse_axis(args.layers, int)
    if args.hidden is not None:
        axes["hidden"] = _parse_axis(args.hidden, int)
    if args.lr is not None:
        axes["lr"] = _parse_axis(args.lr, float)
    multi = {k: v for k, v in axes.items() if len(v) > 1}
    if len(multi) > 1:
        raise CliError(f"one sweep axis at a time, got {sorted(multi)}")
    if not multi:
        raise CliError("sweep needs one multi-valued axis, e.g. "
                       "--layers 1..8 or --lr 0.1,0.01,0.001")
    axis, values = next(iter(multi.items()))

    fixed_layers = axes.get("layers", [6])[0] if axis != "layers" else None
    fixed_hidden = axes.get("hidden", [100])[0] if axis != "hidden" else None
    fixed_lr = axes.get("lr", [0.001])[0] if axis != "lr" else None

    sec = ini.get("train", {})
    epochs = _pick(args.epochs, sec, "epochs", int, 100)
    batch = _pick(args.batch, sec, "batch_size", int, 100)
    dropout = _pick(args.dropout, sec, "dropout", float, 0.5)
    seed = args.seed if args.seed is not None else 0
    budget = args.budget_seconds

    x, y, _ = ds.arrays("train")
    ex, ey, ea = ds.arrays("test") if ds.n_test > 0 else (None, None, None)
    out = _out_dir(args)
    results = []
    for v in values:
        layers = v if axis == "layers" else fixed_layers
        hidden = v if axis == "hidden" else fixed_hidden
        lr = v if axis == "lr" else fixed_lr
        tc = TrainConfig(lr=lr, batch_size=batch, epochs=epochs,
                         dropout=dropout, seed=seed, budget_seconds=budget)
        mlp = init_mlp([ds.dim_in] + [hidden] * layers + [ds.dim_out],
                       ds.k, seed=seed, dropout=dropout,
                       topology_hash=net.content_hash)
        history = train(mlp, x, y, tc,
                        eval_x=ex, eval_labels=ey, eval_active=ea)
        last = history[-1]
        secs = sum(m.seconds for m in history)
        results.append((v, len(history), last.loss, last.msr, last.accuracy,
                        secs))
        print(f"{axis}={v}: {len(history)} epochs, msr {last.msr:.6f}, "
              f"accuracy {last.accuracy:.4f}, {secs:.1f} s")
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([axis, "epochs", "loss", "msr", "accuracy", "seconds"])
        for v, n_ep, loss, msr, acc, secs in results:
            w.writerow([v, n_ep, repr(loss), repr(msr), repr(acc), repr(secs)])
    _write_manifest(
        out, "sweep",
        {"topology": net.content_hash, "dataset": str(args.dataset),
         "axis": axis, "values": values, "epochs": epochs,
         "batch_size": batch, "dropout": dropout,
         "budget_seconds": budget},
        {"sweep.csv": True},
        seed=seed,
    )
    return 0


# ---------------------------------------------------------------------------
# parser wiring

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--topo", required=True,
                   help="builtin topology name or topology file path")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="INI config file")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="flowcast",
                     description="Learned dynamic routing pipeline")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-traffic", help="synthesize a traffic CSV")
    _add_common(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--length", type=int)
    p.add_argument("--utilization", type=float)
    p.add_argument("--amplitude", type=float)
    p.add_argument("--noise", type=float)
    p.add_argument("--period", type=int)
    p.set_defaults(func=_cmd_gen_traffic)

    p = sub.add_parser("gen-dataset",
                       help="run the heuristic over a traffic CSV")
    _add_common(p)
    p.add_argument("--tm", required=True, help="traffic CSV")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--k-paths", dest="k_paths", type=int)
    p.add_argument("--train-fraction", dest="train_fraction", type=float,
                   default=0.7)
    p.add_argument("--format", choices=("binary", "csv"), default="binary")
    p.set_defaults(func=_cmd_gen_dataset)

    p = sub.add_parser("train", help="train the path-choice model")
    _add_common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--layers", type=int, help="hidden layer count")
    p.add_argument("--hidden", type=int, help="hidden layer width")
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--target-accuracy", dest="target_accuracy", type=float)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="score a model on a dataset split")
    _add_common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--split", choices=("train", "test", "all"),
                   default="test")
    p.set_defaults(func=_cmd_eval)

    for name, helptext in (("route-sim", "simulate model routing over time"),
                           ("bench", "paired model-vs-heuristic benchmark")):
        p = sub.add_parser(name, help=helptext)
        _add_common(p)
        p.add_argument("--tm", required=True)
        p.add_argument("--model", required=True)
        p.add_argument("--epsilon", type=float)
        p.add_argument("--k-paths", dest="k_paths", type=int)
        p.add_argument("--window", type=int)
        p.add_argument("--fallback-threshold", dest="fallback_threshold",
                       type=float)
        p.add_argument("--max-ticks", dest="max_ticks", type=int)
        p.set_defaults(func=_cmd_route_sim if name == "route-sim"
                       else _cmd_bench)

    p = sub.add_parser("sweep", help="hyperparameter sweep on one axis")
    _add_common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--layers", help="e.g. 1..8 or 2,4,6")
    p.add_argument("--hidden", help="e.g. 50,100,200")
    p.add_argument("--lr", help="e.g. 0.1,0.01,0.001,0.0001")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--budget-seconds", dest="budget_seconds", type=float)
    p.set_defaults(func=_cmd_sweep)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, TopologyError, TrafficError, ValueError,
            FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
