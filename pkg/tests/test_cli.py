import csv
import json
import math
import subprocess
import sys
from pathlib import Path

import pytest

from neighbor_confidence import cli, pipeline
from neighbor_confidence.config import ConfigError, RunConfig, config_from_dict, demo_config, load_config

TINY = {
    "version": 1,
    "out": "run",
    "corpus": {
        "n_points": 16,
        "noise_sigma": 0.01,
        "seed": 5,
        "train": {"sphere": 8, "ellipsoid": 8},
        "new": {"sphere": 3, "ellipsoid": 3, "box": 3, "cylinder": 3},
    },
    "model": {"z_dim": 4, "seed": 1},
    "train": {"epochs": 4, "batch_size": 4, "seed": 2},
    "neighbors": {"k": 1},
    "calibration": {"holdout_every": 4},
    "tolerance": 0.2,
    "budget": 3,
    "batches": 2,
}

HEADERS = {
    "loss_history.csv": "epoch,loss",
    "embeddings.csv": "id,split,err,z0,z1,z2,z3",
    "fig2a.csv": "id,split,pc0,pc1",
    "fig2b.csv": "id,split,pc0,pc1,err",
    "fig3.csv": "id,nn_dist,err",
    "verdicts.csv": "id,nn_dist,predicted_err,decision",
    "fig4_batch1.csv": "id,pc0,pc1,nn_dist,category",
    "fig4_batch2.csv": "id,pc0,pc1,nn_dist,category",
    "expansion_summary.csv": "batch,training,novel_trusted,insufficient_novelty,novel_abstain,t_low,t_high",
}


def write_config(path: Path, doc=None, **changes) -> Path:
    doc = json.loads(json.dumps(doc or TINY))
    doc.update(changes)
    path.write_text(json.dumps(doc))
    return path


def run_cli(tmp_path, *args):
    cfg = write_config(tmp_path / "cfg.json")
    out = tmp_path / "run"
    return cli.main(list(args) + ["--config", str(cfg), "--out", str(out)]), out


def run_all_commands(tmp_path):
    tmp_path.mkdir(parents=True, exist_ok=True)
    cfg = write_config(tmp_path / "cfg.json")
    out = tmp_path / "run"
    for cmd in ("generate", "train", "embed", "fit", "score", "select", "report"):
        assert cli.main([cmd, "--config", str(cfg), "--out", str(out)]) == 0
    return out


def tree_bytes(root: Path) -> dict:
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_pipeline_outputs_and_schemas(tmp_path, capsys):
    out = run_all_commands(tmp_path)
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 7
    assert "train: sphere=8, ellipsoid=8; new: sphere=3, ellipsoid=3, box=3, cylinder=3" in lines[0]
    for name, header in HEADERS.items():
        rows = list(csv.reader(open(out / name)))
        assert ",".join(rows[0]) == header, name
        assert all(len(r) == len(rows[0]) for r in rows), name
    for name in ("corpus.ncpc", "model.ncae", "calibration.json", "config.json", "corpus_manifest.json"):
        assert (out / name).exists()
    # holdout clouds are neither trained on, scored, nor plotted as known samples
    assert "on 12 clouds (4 held out)" in lines[1]
    fig2a_ids = {int(r["id"]) for r in csv.DictReader(open(out / "fig2a.csv"))}
    assert fig2a_ids.isdisjoint({3, 7, 11, 15})
    assert len(fig2a_ids) == 24
    verdict_ids = [int(r["id"]) for r in csv.DictReader(open(out / "verdicts.csv"))]
    assert verdict_ids == list(range(16, 28))


def test_floats_use_round_trip_form(tmp_path):
    out = run_all_commands(tmp_path)
    for row in csv.DictReader(open(out / "fig3.csv")):
        text = row["nn_dist"]
        assert repr(float(text)) == repr(float(format(float(text), ".17g")))
        assert format(float(text), ".17g") == text


def test_commands_are_deterministic(tmp_path):
    a = run_all_commands(tmp_path / "a")
    b = run_all_commands(tmp_path / "b")
    ta, tb = tree_bytes(a), tree_bytes(b)
    ta.pop("config.json"), tb.pop("config.json")  # records the differing out path
    assert ta == tb


def test_budget_zero_score_abstains(tmp_path):
    out = run_all_commands(tmp_path)
    cfg = tmp_path / "cfg.json"
    assert cli.main(["score", "--config", str(cfg), "--out", str(out), "--budget", "0", "--threshold-mode", "budget"]) == 0
    decisions = {r["decision"] for r in csv.DictReader(open(out / "verdicts.csv"))}
    assert decisions == {"Abstain"}


def test_tolerance_inf_trusts_all(tmp_path):
    out = run_all_commands(tmp_path)
    assert cli.main(["score", "--config", str(tmp_path / "cfg.json"), "--out", str(out), "--tolerance", "inf"]) == 0
    assert {r["decision"] for r in csv.DictReader(open(out / "verdicts.csv"))} == {"Trusted"}


def test_retrain_writes_batch_embeddings(tmp_path):
    out = run_all_commands(tmp_path)
    assert cli.main(["select", "--config", str(tmp_path / "cfg.json"), "--out", str(out), "--retrain"]) == 0
    assert (out / "embeddings_batch2.csv").exists()


def test_exit_code_validation(tmp_path, caplog):
    bad = write_config(tmp_path / "bad.json", budget=-1)
    assert cli.main(["generate", "--config", str(bad), "--out", str(tmp_path / "x")]) == 1
    assert "bad.json" in caplog.text and "'budget'" in caplog.text
    unknown = write_config(tmp_path / "unknown.json", colour="blue")
    assert cli.main(["generate", "--config", str(unknown)]) == 1


def test_exit_code_corrupt_input(tmp_path, caplog):
    out = run_all_commands(tmp_path)
    (out / "embeddings.csv").write_text("id,split,err,z0\n1,train,zz,0\n")
    assert cli.main(["fit", "--config", str(tmp_path / "cfg.json"), "--out", str(out)]) == 1
    assert "embeddings.csv:2" in caplog.text and "'err'" in caplog.text


def test_exit_code_missing_file(tmp_path, caplog):
    code, _ = run_cli(tmp_path, "train")
    assert code == 2
    assert "corpus.ncpc" in caplog.text


def test_exit_code_divergence(tmp_path):
    doc = json.loads(json.dumps(TINY))
    doc["train"]["learning_rate"] = 1e300
    cfg = write_config(tmp_path / "cfg.json", doc)
    out = tmp_path / "run"
    assert cli.main(["generate", "--config", str(cfg), "--out", str(out)]) == 0
    assert cli.main(["train", "--config", str(cfg), "--out", str(out)]) == 3


def test_overrides(tmp_path):
    cfg = load_config(write_config(tmp_path / "c.json"))
    over = cfg.with_overrides(seed=9, budget=7, tolerance=math.inf, k=2, out="elsewhere")
    assert (over.corpus.seed, over.budget, over.tolerance, over.neighbors.k, over.out) == (9, 7, math.inf, 2, "elsewhere")
    assert cfg.corpus.seed == 5


def test_config_round_trip():
    cfg = config_from_dict(TINY)
    assert config_from_dict(json.loads(cfg.to_json())) == cfg
    demo = demo_config()
    assert config_from_dict(json.loads(demo.to_json())) == demo


@pytest.mark.parametrize(
    "change",
    [{"version": 2}, {"neighbors": {"k": 0}}, {"calibration": {"holdout_every": 1}}, {"tolerance": "lots"},
     {"corpus": {"train": {"torus": 3}}}, {"model": {"z_dim": 0}}, {"train": {"epochs": 0}}],
)
def test_config_rejects(change):
    doc = json.loads(json.dumps(TINY))
    doc.update(change)
    with pytest.raises(ConfigError):
        config_from_dict(doc)


def test_split_roles():
    ids = list(range(10))
    splits = ["train"] * 8 + ["new"] * 2
    assert pipeline.split_roles(ids, splits, 0) == (list(range(8)), [], [8, 9])
    assert pipeline.split_roles(ids, splits, 4) == ([0, 1, 2, 4, 5, 6], [3, 7], [8, 9])


def test_leave_self_out_calibration_path(tmp_path):
    doc = json.loads(json.dumps(TINY))
    doc["calibration"] = {"holdout_every": 0}
    cfg = write_config(tmp_path / "cfg.json", doc)
    out = tmp_path / "run"
    assert cli.main(["run", "--config", str(cfg), "--out", str(out)]) == 0
    assert json.loads((out / "calibration.json").read_text())["n_calibration"] == 16


def test_nc_log_controls_stderr(tmp_path):
    cfg = write_config(tmp_path / "cfg.json")
    base = [sys.executable, "-m", "neighbor_confidence.cli", "generate", "--config", str(cfg), "--out", str(tmp_path / "r")]
    quiet = subprocess.run(base, capture_output=True, text=True, env={"NC_LOG": "error"})
    assert quiet.returncode == 0 and quiet.stderr == ""
    assert quiet.stdout.startswith("generated 28 clouds")
    broken = [sys.executable, "-m", "neighbor_confidence.cli", "train", "--config", str(cfg), "--budget", "-3"]
    loud = subprocess.run(broken, capture_output=True, text=True, env={"NC_LOG": "info"})
    assert loud.returncode == 1 and "budget" in loud.stderr and loud.stdout == ""


def test_help_lists_commands(capsys):
    with pytest.raises(SystemExit) as info:
        cli.main(["--help"])
    assert info.value.code == 0
    text = capsys.readouterr().out
    for cmd in ("generate", "train", "embed", "fit", "score", "select", "report"):
        assert cmd in text


def test_default_run_config_is_valid():
    RunConfig().validate()
