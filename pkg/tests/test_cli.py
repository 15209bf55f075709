"""Command-line entry points, exit codes and written artifacts."""

import csv
import json

import numpy as np
import pytest

from neuroforge.arch import Add, BlockGraph, Edge, NetworkSpec, OpKind, baseline_spec
from neuroforge.cli import main, structure_tables
from neuroforge.growth import HistoryLog, SearchConfig, SearchRecord


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def with_block0(spec, block):
    blocks = (block,) + spec.blocks[1:]
    return NetworkSpec(spec.n_filters, spec.n_blocks, blocks, spec.num_classes, spec.input_shape)


@pytest.fixture
def history_dir(tmp_path):
    """Three records with known structure; the top two are the split and plain networks."""
    base = baseline_spec(4, 1, 3, (1, 8, 8))
    split = with_block0(base, BlockGraph(Add((Edge(OpKind.CONV3X3, 4), Edge(OpKind.CONV5X5, 4))), 4))
    deep = with_block0(base, BlockGraph.single(4, OpKind.CONV7X7))
    log = HistoryLog(str(tmp_path / "run"))
    log.start(SearchConfig(n_population=3, n_sample=1, n_iter=3, n_filters=4, n_blocks=1))
    for age, (spec, eps) in enumerate([(base, 1.2), (split, 1.5), (deep, 0.5)]):
        log.append(SearchRecord(spec, 0.5, 100, eps, age))
    return tmp_path / "run"


class TestScale:
    def test_reference_point(self, capsys):
        code, out, _ = run(capsys, "scale", "--n-ds", "50000", "--c-ds", "3")
        assert code == 0 and out.strip() == "N_F=16 N_S=3900"

    def test_without_channel_factor(self, capsys):
        _, out, _ = run(capsys, "scale", "--n-ds", "1000", "--c-ds", "1", "--no-channel-factor")
        assert out.strip() == "N_F=2 N_S=552"

    def test_invalid_size(self, capsys):
        code, _, err = run(capsys, "scale", "--n-ds", "0", "--c-ds", "3")
        assert code != 0 and "error" in err


class TestBuildParams:
    def test_sp_resnet(self, capsys, tmp_path):
        path = str(tmp_path / "sp.json")
        assert run(capsys, "build", "--preset", "sp-resnet", "--out", path)[0] == 0
        code, out, _ = run(capsys, "params", "--arch", path)
        assert code == 0
        assert "conv layers per stack: 6 8 4" in out
        assert out.strip().splitlines()[-1] == "total\t1584058"

    def test_resnet_total(self, capsys, tmp_path):
        path = str(tmp_path / "r.json")
        run(capsys, "build", "--preset", "resnet", "--nb", "3", "--nf", "48", "--out", path)
        _, out, _ = run(capsys, "params", "--arch", path)
        assert out.strip().splitlines()[-1] == "total\t2435386"

    def test_growth_spec_params(self, capsys, tmp_path):
        path = tmp_path / "g.json"
        path.write_text(baseline_spec(16, 3).dumps())
        _, out, _ = run(capsys, "params", "--arch", str(path))
        assert "stem.weight\tconv\t432" in out

    def test_sp_needs_reference_baseline(self, capsys, tmp_path):
        code, _, err = run(capsys, "build", "--preset", "sp-resnet", "--nb", "2", "--out", str(tmp_path / "x"))
        assert code == 1 and "--preset" in err


class TestAnalyze:
    def test_structure_tables(self, capsys, history_dir, tmp_path):
        out_dir = tmp_path / "report"
        code, _, _ = run(capsys, "analyze", "--history", str(history_dir), "--out", str(out_dir), "--top", "2")
        assert code == 0
        rows = list(csv.DictReader(open(out_dir / "structure.csv")))
        assert float(rows[0]["H_mean"]) == 1.0 and float(rows[0]["H_std"]) == 0.0
        assert float(rows[0]["W_mean"]) == 1.5 and float(rows[0]["W_std"]) == 0.5
        ops = {(r["stack"], r["op"]): float(r["fraction"]) for r in csv.DictReader(open(out_dir / "op_composition.csv"))}
        assert ops[("0", "conv3x3")] == pytest.approx(2 / 3) and ops[("0", "conv5x5")] == pytest.approx(1 / 3)
        assert ops[("0", "conv7x7")] == 0.0
        report = json.loads((out_dir / "report.json").read_text())
        assert [r["epsilon"] for r in report["records"]] == [1.5, 1.2]
        manifest = json.loads((out_dir / "manifest.json").read_text())
        assert "report.json" in manifest["outputs"]

    def test_structure_tables_function(self):
        hw, _ = structure_tables([baseline_spec(4, 1), baseline_spec(4, 1)])
        np.testing.assert_allclose([r[1:] for r in hw], [[1.0, 0.0, 1.0, 0.0]] * 3)

    def test_missing_directory(self, capsys, tmp_path):
        code, _, err = run(capsys, "analyze", "--history", str(tmp_path / "nope"), "--out", str(tmp_path / "o"))
        assert code == 1 and "--history" in err


class TestRuns:
    def test_train_synthetic(self, capsys, tmp_path):
        arch = tmp_path / "a.json"
        arch.write_text(baseline_spec(2, 1, 2, (1, 8, 8)).dumps())
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"train": {"n_steps": 3, "batch_size": 8}}))
        code, out, _ = run(capsys, "train", "--arch", str(arch), "--dataset",
                           "synth:classes=2,n=40,dim=8,channels=1", "--config", str(cfg),
                           "--out", str(tmp_path / "o"))
        assert code == 0 and out.startswith("alpha=")
        metrics = json.loads((tmp_path / "o" / "metrics.json").read_text())
        assert set(metrics) == {"alpha", "eta", "final_loss"}

    def test_seeded_rerun_is_byte_identical(self, capsys, tmp_path):
        arch = tmp_path / "a.json"
        arch.write_text(baseline_spec(2, 1, 2, (1, 8, 8)).dumps())
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"train": {"n_steps": 3, "batch_size": 8}}))
        outputs = []
        for _ in range(2):
            run(capsys, "train", "--arch", str(arch), "--dataset", "synth:classes=2,n=40,dim=8,channels=1",
                "--config", str(cfg), "--out", str(tmp_path / "o"))
            outputs.append({p.name: p.read_bytes() for p in (tmp_path / "o").iterdir()})
        assert outputs[0] == outputs[1] and "manifest.json" in outputs[0]

    def test_train_shape_mismatch(self, capsys, tmp_path):
        arch = tmp_path / "a.json"
        arch.write_text(baseline_spec(2, 1, 2, (3, 8, 8)).dumps())
        code, _, err = run(capsys, "train", "--arch", str(arch), "--dataset",
                           "synth:classes=2,n=40,dim=8,channels=1", "--out", str(tmp_path / "o"))
        assert code == 1 and "--arch" in err

    def test_grow_search_and_resume(self, capsys, tmp_path, monkeypatch):
        monkeypatch.setenv("NEUROFORGE_SEED", "3")
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({
            "search": {"n_population": 3, "n_sample": 2, "n_iter": 4, "n_op_max": 20, "n_growth_init": 2,
                       "n_filters": 2, "n_blocks": 1},
            "train": {"n_steps": 2, "batch_size": 8},
        }))
        args = ["grow-search", "--dataset", "synth:classes=2,n=40,dim=8,channels=1",
                "--config", str(cfg), "--out", str(tmp_path / "run")]
        code, out, _ = run(capsys, *args)
        assert code == 0 and out.startswith("best ")
        history = (tmp_path / "run" / "history.jsonl").read_text()
        manifest = json.loads((tmp_path / "run" / "manifest.json").read_text())
        assert manifest["seed"] == 3
        assert run(capsys, *args, "--resume")[0] == 0
        assert (tmp_path / "run" / "history.jsonl").read_text() == history

    def test_prune_search(self, capsys, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"resnet": {"n_blocks": 1, "n_filters": 3},
                                   "train": {"n_steps": 2, "batch_size": 8},
                                   "prune": {"n_iter": 2, "batch_size": 8, "delta_alpha_max": 1.0}}))
        code, _, _ = run(capsys, "prune-search", "--dataset", "synth:classes=2,n=40,dim=8,channels=1",
                         "--config", str(cfg), "--out", str(tmp_path / "p"))
        assert code == 0
        summary = json.loads((tmp_path / "p" / "summary.json").read_text())
        assert summary["pruned"] == 2 and summary["final_eta"] < summary["eta0"]


class TestExitCodes:
    def test_unknown_command(self, capsys):
        assert run(capsys, "frobnicate")[0] == 1

    def test_missing_required(self, capsys):
        assert run(capsys, "scale", "--n-ds", "5")[0] == 1

    def test_bad_config_json(self, capsys, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text("{not json")
        code, _, err = run(capsys, "grow-search", "--dataset", "synth:", "--config", str(cfg),
                           "--out", str(tmp_path / "o"))
        assert code == 1 and "--config" in err

    def test_bad_seed_env(self, capsys, tmp_path, monkeypatch):
        monkeypatch.setenv("NEUROFORGE_SEED", "abc")
        code, _, err = run(capsys, "train", "--arch", str(tmp_path / "x"), "--dataset", "synth:",
                           "--out", str(tmp_path / "o"))
        assert code == 1

    def test_runtime_failure_exits_two(self, capsys, tmp_path):
        bad = tmp_path / "bad.nft"
        bad.write_bytes(b"NFT1" + bytes([4, 0, 0, 0]) + bytes([1, 0, 0, 0]) * 4 + bytes(4))
        (tmp_path / "bad.nft.labels").write_bytes(bytes(4))
        arch = tmp_path / "a.json"
        arch.write_text(baseline_spec(2, 1, 2, (1, 1, 1)).dumps())
        code, _, err = run(capsys, "train", "--arch", str(arch), "--dataset", str(bad),
                           "--out", str(tmp_path / "o"))
        assert code in (1, 2) and "error" in err

    def test_version(self, capsys):
        assert run(capsys, "--version")[0] == 0
