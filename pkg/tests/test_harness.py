import csv
import json
import random

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from proxdtr.cli import main
from proxdtr.harness import (
    ConfigError,
    ExperimentConfig,
    RegretRecord,
    emit_outputs,
    format_stat,
    nearest_rank,
    resolve_workers,
    run_experiment,
    summarize,
)


def _records(values, method="proxy", n=100):
    return [RegretRecord(n, i, method, float(v)) for i, v in enumerate(values)]


def test_nearest_rank_convention():
    values = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0]
    assert [nearest_rank(values, q) for q in (10, 25, 50, 75, 90)] == [1.0, 3.0, 5.0, 8.0, 9.0]
    assert nearest_rank([4.0], 90) == 4.0


def test_single_record_summary():
    (row,) = summarize(_records([0.25]))
    assert row["count"] == 1 and row["mean"] == 0.25
    assert all(row[f"q{q}"] == 0.25 for q in (10, 25, 50, 75, 90))


def test_all_zero_group_prints_threshold():
    (row,) = summarize(_records([0.0] * 7))
    assert {format_stat(row[k]) for k in row if k.startswith("q") or k == "mean"} == {"<2.23e-16"}
    assert format_stat(0.5) == "0.5"


def test_failures_counted_not_scored():
    recs = _records([0.1, 0.3]) + [RegretRecord(100, 9, "proxy", failed=True, reason="x")]
    recs.append(RegretRecord(100, 0, "nuca", failed=True, reason="x"))
    rows = {r["method"]: r for r in summarize(recs)}
    assert rows["proxy"]["count"] == 2 and rows["proxy"]["failures"] == 1
    assert rows["proxy"]["mean"] == pytest.approx(0.2)
    assert "note" in rows["nuca"]


@given(st.lists(st.floats(0, 1), min_size=1, max_size=40), st.randoms())
def test_summary_invariant_under_permutation(values, rnd):
    recs = _records(values)
    shuffled = list(recs)
    rnd.shuffle(shuffled)
    a, b = summarize(recs)[0], summarize(shuffled)[0]
    assert {k: v for k, v in a.items() if k != "mean"} == {k: v for k, v in b.items() if k != "mean"}
    assert a["mean"] == pytest.approx(b["mean"])


@pytest.mark.parametrize(
    "kwargs",
    [
        {"iterations": 0},
        {"sizes": ()},
        {"sizes": (0,)},
        {"methods": ()},
        {"methods": ("magic",)},
        {"on_empty": "ignore"},
        {"alpha": -1.0},
        {"workers": 0},
        {"mode": "qr"},
        {"methods": ("proxy-ll",), "ll_orders": ()},
    ],
)
def test_config_validation(kwargs):
    with pytest.raises(ConfigError):
        ExperimentConfig(**kwargs)


def test_method_names_expand_orders():
    cfg = ExperimentConfig(methods=("proxy", "proxy-ll"), ll_orders=(4, 6))
    assert cfg.method_names() == ["proxy", "proxy-LL-4", "proxy-LL-6"]
    assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg


@pytest.fixture(scope="module")
def small_run(net):
    cfg = ExperimentConfig(sizes=(3000, 6000), iterations=3, methods=("proxy", "nuca", "oracle"), seed=5)
    return run_experiment(cfg, net)


def test_records_are_complete_and_closed_under_spectrum(small_run, spectrum):
    recs = small_run.records
    assert len(recs) == 2 * 3 * 3
    allowed = set(np.round(spectrum.regrets, 15))
    for r in recs:
        if not r.failed:
            assert r.regret >= 0
            assert round(r.regret, 15) in allowed
            assert r.regret == spectrum.regrets[r.regime_index]
    assert len(small_run.summary) == 2 * 3


def test_outputs_and_manifest_rerun(small_run, tmp_path, net):
    emit_outputs(small_run, tmp_path / "a")
    with open(tmp_path / "a" / "summary.csv") as fh:
        assert len(list(csv.DictReader(fh))) == 6
    with open(tmp_path / "a" / "regret_diffs.csv") as fh:
        for row in csv.DictReader(fh):
            assert float(row["difference"]) == float(row["nuca_regret"]) - float(row["proxy_regret"])
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["seed"] == 5 and manifest["config"]["iterations"] == 3
    assert main(["rerun", "--manifest", str(tmp_path / "a" / "manifest.json"), "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "records.csv").read_bytes() == (tmp_path / "b" / "records.csv").read_bytes()


def test_worker_count_does_not_change_records(net):
    cfg = dict(sizes=(2000,), iterations=4, methods=("proxy", "nuca"), seed=11)
    one = run_experiment(ExperimentConfig(**cfg, workers=1), net).records
    two = run_experiment(ExperimentConfig(**cfg, workers=2), net).records
    assert [r.row() for r in one] == [r.row() for r in two]


def test_sparse_samples_record_failures(net):
    cfg = ExperimentConfig(sizes=(200,), iterations=2, methods=("proxy",), seed=1)
    recs = run_experiment(cfg, net).records
    assert all(r.failed and r.reason.startswith("CellEmptyError") for r in recs)
    strict = ExperimentConfig(sizes=(200,), iterations=1, methods=("proxy",), on_empty="fail")
    with pytest.raises(Exception, match="empty conditioning cell"):
        run_experiment(strict, net)


def test_env_overrides_workers(monkeypatch):
    monkeypatch.setenv("PROXDTR_WORKERS", "3")
    assert resolve_workers(1) == 3
    monkeypatch.setenv("PROXDTR_WORKERS", "zero")
    with pytest.raises(ConfigError):
        resolve_workers(1)
    monkeypatch.delenv("PROXDTR_WORKERS")
    assert resolve_workers(2) == 2


def test_cli_exit_codes(tmp_path, capsys):
    out = str(tmp_path / "x")
    assert main(["experiment", "--iters", "0", "--out", out]) == 2
    assert main(["experiment", "--methods", "bogus", "--out", out]) == 2
    assert main(["experiment", "--model", str(tmp_path / "missing.json"), "--iters", "1", "--out", out]) == 2
    assert main(["frobnicate"]) == 2
    assert main(["rerun", "--manifest", str(tmp_path / "none.json"), "--out", out]) == 2


def test_cli_pipeline(tmp_path, capsys):
    data = tmp_path / "d.csv"
    assert main(["simulate", "--n", "30000", "--seed", "2", "--out", str(data)]) == 0
    for method in ("proxy", "nuca", "proxy-ll"):
        path = tmp_path / f"{method}.json"
        assert main(["estimate", "--method", method, "--data", str(data), "--out", str(path)]) == 0
        regime = json.loads(path.read_text())["regime"]
        assert set(regime) >= {"d1", "d2"}
    assert main(["estimate", "--method", "oracle", "--data", str(data)]) == 1
    latent = tmp_path / "full.csv"
    assert main(["simulate", "--n", "30000", "--observe-latent", "--out", str(latent)]) == 0
    assert main(["estimate", "--method", "oracle", "--data", str(latent), "--out", str(tmp_path / "o.json")]) == 0
    result = tmp_path / "eval.json"
    assert main(["evaluate", "--regime", str(tmp_path / "proxy.json"), "--out", str(result)]) == 0
    assert json.loads(result.read_text())["regret"] >= 0
    assert main(["spectrum", "--out", str(tmp_path / "s.csv")]) == 0
    assert main(["identify", "--model", "paper", "--out", str(tmp_path / "id.json")]) == 0
    diag = json.loads((tmp_path / "id.json").read_text())["diagnostics"]
    assert diag["out_of_range"] == 0
