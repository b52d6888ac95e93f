import json

import pytest
import yaml

from shadowpool.cli import main
from shadowpool.metrics import format_delta
from shadowpool.pipeline import REPORT_KEYS, format_summary

TINY = {
    "version": 1, "seed": 0,
    "dataset": {"model_size": 300, "population": 100, "n_queries": 60, "n_classes": 3, "dim": 6},
    "architecture": {"n_layers": 2, "n_experts": 3, "stem_widths": [8], "expert_width": 8},
    "training": {"epochs": 3},
    "pool": {"epochs": 3, "ft_epochs": 1, "n_shared": 8},
}


@pytest.fixture(scope="module")
def tiny(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.yaml"
    cfg.write_text(yaml.safe_dump(TINY))
    assert main(["run", "--config", str(cfg), "--out", str(root / "a")]) == 0
    return root, cfg


def test_reports_have_fixed_keys(tiny):
    root, _ = tiny
    for source in ("base", "aug", "pool"):
        rep = json.loads((root / "a" / "results" / source / "report.json").read_text())
        assert tuple(sorted(rep)) == tuple(sorted(REPORT_KEYS))
        assert 0.0 <= rep["auc"] <= 1.0 and rep["cost_evaluations"] > 0
        assert rep["cost_wallclock_s"] is None
        roc = (root / "a" / "results" / source / "roc.csv").read_text().splitlines()
        assert roc[0] == "threshold,fpr,tpr" and len(roc) > 2
    timing = json.loads((root / "a" / "results" / "timing.json").read_text())
    assert set(timing["cost_wallclock_s"]) == {"base", "aug", "pool"}


def test_rerun_is_up_to_date(tiny, capsys):
    root, cfg = tiny
    stamp = (root / "a" / "stamps" / "attack.json").read_text()
    assert main(["attack", "--config", str(cfg), "--out", str(root / "a")]) == 0
    assert "up to date" in capsys.readouterr().out
    assert (root / "a" / "stamps" / "attack.json").read_text() == stamp


def test_tampered_output_triggers_rerun(tiny, capsys):
    root, cfg = tiny
    report = root / "a" / "results" / "pool" / "report.json"
    original = report.read_text()
    report.write_text(original.replace('"auc"', '"auc" ', 1))
    assert main(["attack", "--config", str(cfg), "--out", str(root / "a")]) == 0
    assert "up to date" not in capsys.readouterr().out
    assert report.read_text() == original


def test_config_change_invalidates_downstream(tiny, tmp_path, capsys):
    root, cfg = tiny
    changed = dict(TINY, attack={"method": "rmia"})
    p = tmp_path / "rmia.yaml"
    p.write_text(yaml.safe_dump(changed))
    out = str(root / "a")
    assert main(["train-target", "--config", str(p), "--out", out]) == 0
    assert "up to date" in capsys.readouterr().out
    assert main(["attack", "--config", str(p), "--out", out]) == 0
    rep = json.loads((root / "a" / "results" / "pool" / "report.json").read_text())
    assert rep["method"] == "rmia"
    main(["attack", "--config", str(cfg), "--out", out])


def test_runs_are_byte_identical(tiny):
    root, cfg = tiny
    assert main(["run", "--config", str(cfg), "--out", str(root / "b")]) == 0
    for source in ("base", "aug", "pool"):
        for name in ("report.json", "roc.csv", "scores.csv"):
            a = (root / "a" / "results" / source / name).read_bytes()
            b = (root / "b" / "results" / source / name).read_bytes()
            assert a == b, (source, name)
    assert (root / "a" / "summary.json").read_bytes() == (root / "b" / "summary.json").read_bytes()


def test_missing_dependency_exit_code(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(yaml.safe_dump(TINY))
    assert main(["attack", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 10
    assert "run it first" in capsys.readouterr().err
    assert main(["report", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 10


def test_bad_config_exit_code(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(yaml.safe_dump({"version": 1, "pool": {"alpha": -1}}))
    assert main(["gen-data", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 11
    assert "pool.alpha" in capsys.readouterr().err


def test_init_config_writes_loadable_file(tmp_path):
    assert main(["init-config", str(tmp_path / "d.yaml")]) == 0
    assert yaml.safe_load((tmp_path / "d.yaml").read_text())["version"] == 1


def test_gradcheck_command(tmp_path, capsys):
    assert main(["gradcheck", "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "gradcheck.json").read_text())
    assert rep["n_pools"] == 20 and rep["passed"]


def test_delta_formatting():
    assert format_delta(0.0199) == "="
    assert format_delta(-0.0199) == "="
    assert format_delta(0.02) == "+0.02"
    assert format_delta(-0.131) == "-0.13"
    summary = {"n_runs": 1, "method": "lira", "mode": "online",
               "rows": {"base": {"auc": 0.7, "tf1": 0.1, "tf01": 0.05, "cost_evaluations": 100},
                        "pool": {"auc": 0.71, "tf1": 0.2, "tf01": 0.05, "cost_evaluations": 12}},
               "deltas": {"pool": {"delta_auc": 0.01, "delta_tf1": 0.1, "delta_tf01": 0.0,
                                   "delta_cost_pct": 88.0}}}
    last = format_summary(summary).splitlines()[-1].split()
    assert last == ["Δ", "pool", "=", "+0.10", "=", "↓88%"]


def test_five_seeds(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(yaml.safe_dump(TINY))
    out = tmp_path / "five"
    assert main(["run", "--five-seeds", "--config", str(cfg), "--out", str(out)]) == 0
    assert sorted(p.name for p in out.glob("seed-*")) == [f"seed-{s}" for s in range(5)]
    summary = json.loads((out / "summary.json").read_text())
    assert summary["n_runs"] == 5
    aucs = [json.loads((out / f"seed-{s}" / "results" / "pool" / "report.json").read_text())["auc"]
            for s in range(5)]
    assert summary["rows"]["pool"]["auc"] == pytest.approx(sum(aucs) / 5)
    capsys.readouterr()
    assert main(["report", "--five-seeds", "--config", str(cfg), "--out", str(out)]) == 0
    assert "over 5 run(s)" in capsys.readouterr().out
