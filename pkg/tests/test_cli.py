import hashlib
import json

import pytest

from flowcast.cli import main
from flowcast.neuralnet import init_mlp, save_model
from flowcast.topology import builtin_topology


def run(*argv):
    return main(list(argv))


@pytest.fixture(scope="module")
def workdir(tmp_path_factory, warm):
    """One full pipeline pass on the three-node fixture, shared by the
    assertions below: traffic -> dataset -> model -> metrics."""
    root = tmp_path_factory.mktemp("cli")
    assert run("gen-traffic", "--topo", "triangle", "--out", str(root / "t"),
               "--seed", "7", "--length", "40") == 0
    assert run("gen-dataset", "--topo", "triangle", "--out", str(root / "d"),
               "--tm", str(root / "t" / "tm.csv"), "--k-paths", "3") == 0
    assert run("train", "--topo", "triangle", "--out", str(root / "m"),
               "--dataset", str(root / "d" / "dataset.bin"),
               "--layers", "2", "--hidden", "16", "--epochs", "4",
               "--dropout", "0.0", "--seed", "3") == 0
    return root


def test_gen_traffic_artifacts(workdir):
    out = workdir / "t"
    assert (out / "tm.csv").exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "gen-traffic"
    assert manifest["seed"] == 7
    entry = manifest["artifacts"]["tm.csv"]
    want = hashlib.sha256((out / "tm.csv").read_bytes()).hexdigest()
    assert entry["sha256"] == want and entry["timing"] is False


def test_gen_dataset_artifacts(workdir):
    out = workdir / "d"
    manifest = json.loads((out / "manifest.json").read_text())
    assert "dataset_hash" in manifest and len(manifest["dataset_hash"]) == 64
    assert manifest["artifacts"]["dataset.bin"]["timing"] is True


def test_train_artifacts_split_timing(workdir):
    out = workdir / "m"
    manifest = json.loads((out / "manifest.json").read_text())
    arts = manifest["artifacts"]
    assert arts["model.bin"]["timing"] is False
    assert arts["history.csv"]["timing"] is False
    assert arts["history_timing.csv"]["timing"] is True
    header = (out / "history.csv").read_text().splitlines()[0]
    assert "seconds" not in header


def test_eval_writes_metrics(workdir, tmp_path):
    out = tmp_path / "ev"
    assert run("eval", "--topo", "triangle", "--out", str(out),
               "--dataset", str(workdir / "d" / "dataset.bin"),
               "--model", str(workdir / "m" / "model.bin")) == 0
    rows = (out / "metrics.csv").read_text().strip().splitlines()
    assert rows[0] == "accuracy,exact_match_rate,throughput_ratio,n_samples"
    acc = float(rows[1].split(",")[0])
    assert 0.0 <= acc <= 1.0


def test_route_sim_and_bench(workdir, tmp_path):
    sim = tmp_path / "sim"
    assert run("route-sim", "--topo", "triangle", "--out", str(sim),
               "--tm", str(workdir / "t" / "tm.csv"),
               "--model", str(workdir / "m" / "model.bin"),
               "--window", "5", "--max-ticks", "10") == 0
    assert len((sim / "ticks.csv").read_text().strip().splitlines()) == 11

    bench = tmp_path / "bm"
    assert run("bench", "--topo", "triangle", "--out", str(bench),
               "--tm", str(workdir / "t" / "tm.csv"),
               "--model", str(workdir / "m" / "model.bin"),
               "--window", "5", "--max-ticks", "10") == 0
    assert (bench / "compare.csv").exists()
    summary = (bench / "summary.csv").read_text().splitlines()
    assert summary[0].startswith("n_ticks,accuracy")


def test_train_rerun_reproduces_model(workdir, tmp_path):
    out = tmp_path / "m2"
    assert run("train", "--topo", "triangle", "--out", str(out),
               "--dataset", str(workdir / "d" / "dataset.bin"),
               "--layers", "2", "--hidden", "16", "--epochs", "4",
               "--dropout", "0.0", "--seed", "3") == 0
    a = (workdir / "m" / "model.bin").read_bytes()
    b = (out / "model.bin").read_bytes()
    assert a == b
    assert (workdir / "m" / "history.csv").read_bytes() == \
        (out / "history.csv").read_bytes()


def test_train_zero_epochs_saves_initialization(workdir, tmp_path):
    out = tmp_path / "m0"
    assert run("train", "--topo", "triangle", "--out", str(out),
               "--dataset", str(workdir / "d" / "dataset.bin"),
               "--layers", "2", "--hidden", "16", "--epochs", "0",
               "--dropout", "0.0", "--seed", "3") == 0
    net = builtin_topology("triangle")
    fresh = init_mlp([9, 16, 16, 18], 3, seed=3, dropout=0.0,
                     topology_hash=net.content_hash)
    ref = tmp_path / "fresh.bin"
    save_model(fresh, str(ref))
    assert ref.read_bytes() == (out / "model.bin").read_bytes()


def test_eval_refuses_topology_mismatch(workdir, tmp_path, capsys):
    # model stamped with a different topology than the dataset's
    other = init_mlp([9, 8, 18], 3, seed=0,
                     topology_hash=builtin_topology("geant").content_hash)
    model_path = tmp_path / "other.bin"
    save_model(other, str(model_path))
    rc = run("eval", "--topo", "triangle", "--out", str(tmp_path / "ev"),
             "--dataset", str(workdir / "d" / "dataset.bin"),
             "--model", str(model_path))
    assert rc == 2
    err = capsys.readouterr().err
    assert err.startswith("error:") and err.count("\n") == 1


def test_missing_topology_is_one_line_error(tmp_path, capsys):
    rc = run("gen-traffic", "--topo", "no-such.topo",
             "--out", str(tmp_path / "x"))
    assert rc == 2
    err = capsys.readouterr().err
    assert err.startswith("error:") and err.count("\n") == 1


def test_bad_usage_exits_two(capsys):
    with pytest.raises(SystemExit) as exc:
        run("gen-traffic", "--topo", "triangle")  # --out missing
    assert exc.value.code == 2
    assert capsys.readouterr().err.startswith("error:")


def test_sweep_axis_rules(workdir, tmp_path, capsys):
    rc = run("sweep", "--topo", "triangle", "--out", str(tmp_path / "s1"),
             "--dataset", str(workdir / "d" / "dataset.bin"),
             "--lr", "0.1,0.01", "--layers", "1..2", "--epochs", "1")
    assert rc == 2
    assert "one sweep axis" in capsys.readouterr().err
    rc = run("sweep", "--topo", "triangle", "--out", str(tmp_path / "s2"),
             "--dataset", str(workdir / "d" / "dataset.bin"), "--epochs", "1")
    assert rc == 2

    out = tmp_path / "s3"
    assert run("sweep", "--topo", "triangle", "--out", str(out),
               "--dataset", str(workdir / "d" / "dataset.bin"),
               "--layers", "1..2", "--epochs", "1", "--dropout", "0.0") == 0
    rows = (out / "sweep.csv").read_text().strip().splitlines()
    assert rows[0].startswith("layers,")
    assert len(rows) == 3


def test_k_paths_contradiction_is_refused(workdir, tmp_path, capsys):
    rc = run("route-sim", "--topo", "triangle", "--out", str(tmp_path / "x"),
             "--tm", str(workdir / "t" / "tm.csv"),
             "--model", str(workdir / "m" / "model.bin"),
             "--k-paths", "4", "--window", "5")
    assert rc == 2
    assert "contradicts" in capsys.readouterr().err


def test_config_file_and_flag_precedence(tmp_path):
    ini = tmp_path / "cfg.ini"
    ini.write_text("[traffic]\nutilization = 0.4\nlength = 12\n")
    out = tmp_path / "from-file"
    assert run("gen-traffic", "--topo", "triangle", "--out", str(out),
               "--config", str(ini), "--seed", "1") == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["utilization"] == 0.4
    assert manifest["config"]["length"] == 12

    out2 = tmp_path / "flag-wins"
    assert run("gen-traffic", "--topo", "triangle", "--out", str(out2),
               "--config", str(ini), "--seed", "1",
               "--utilization", "0.6") == 0
    manifest2 = json.loads((out2 / "manifest.json").read_text())
    assert manifest2["config"]["utilization"] == 0.6
