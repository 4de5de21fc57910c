import json
from fractions import Fraction
from math import comb

import pytest

import cotprobe

COT = "Ava has 4 * 14 = 56 stickers.\n\nShe gives away 27.\n\nNow Ava has 56 - 27 = 29 stickers."


def test_hypergeometric_checks():
    assert 5.1e-4 <= cotprobe.hypergeom_tail(512, 20, 20, 5) <= 6.3e-4
    assert 8.3e-4 <= cotprobe.hypergeom_tail(208, 20, 20, 7) <= 1.01e-3


def test_mcnemar_matches_binomial_sum():
    want = Fraction(2 * sum(comb(12, i) for i in range(3)), 2**12)
    assert cotprobe.mcnemar_exact(2, 10)["p"] == float(want)


def test_spearman_monotone_five_points():
    r = cotprobe.spearman_exact([0, 0.25, 0.5, 0.75, 1], [0.1, 0.2, 0.3, 0.5, 0.9])
    assert r["estimate"] == 1.0
    assert r["p"] == 2 / 120


def test_wilson_and_holm():
    w = cotprobe.wilson_ci(0, 10)
    assert w["estimate"] == 0.0 and w["ci"][0] == 0.0 and 0 < w["ci"][1] < 0.31
    assert cotprobe.holm_bonferroni([0.01, 0.04, 0.03]) == pytest.approx([0.03, 0.06, 0.06])


def test_copybot_reads_trailing_framed_number():
    d = cotprobe.distractor(COT, 29, "C2", "F1")
    assert d["text"].endswith("#### ")
    assert cotprobe.copybot(d["text"]).strip() == d["distractor_value"]
    bare = cotprobe.distractor(COT, 29, "C2", "F2")
    assert cotprobe.copybot(bare["text"]).strip() == "29"


def test_perturbations_are_deterministic():
    a = cotprobe.shuffle(COT, 29, "step_shuffle", index=3, seed=1)
    b = cotprobe.shuffle(COT, 29, "step_shuffle", index=3, seed=1)
    assert a == b
    assert a["condition"] == "step_shuffle@s1"
    rep = cotprobe.corrupt(COT, 29, "D_rep")
    assert "= 29" not in rep["text"]
    assert cotprobe.corrupt(COT, 29, "no_cot")["text"] == "#### "
    with pytest.raises(ValueError):
        cotprobe.shuffle(COT, 29, "sideways")


def test_run_verify_report(tmp_path):
    data = tmp_path / "data.jsonl"
    with data.open("w") as f:
        for p in cotprobe.fixture("arithmetic", 20):
            f.write(json.dumps(p) + "\n")
    plan = tmp_path / "plan.json"
    plan.write_text(json.dumps({"experiment": "decomposition", "dataset": "data.jsonl", "backend": "sim:copybot"}))
    out = cotprobe.run_plan(plan, tmp_path / "runs")
    assert out["model_calls"] > 0
    assert float(out["artifacts"]["decomposition"]["delta_copy"]["estimate"]) == 1.0
    again = cotprobe.run_plan(plan, tmp_path / "runs")
    assert again["run_id"] == out["run_id"] and again["model_calls"] == 0
    assert cotprobe.verify(tmp_path / "runs", out["run_id"])["ok"]
    assert "delta" in cotprobe.report(str(tmp_path / "runs"), out["run_id"], "decomposition").lower()


def test_invalid_plan_raises(tmp_path):
    plan = tmp_path / "plan.json"
    plan.write_text(json.dumps({"experiment": "decomposition", "dataset": "x.jsonl", "seeds": "many"}))
    with pytest.raises(ValueError, match="seeds"):
        cotprobe.run_plan(plan, tmp_path / "runs")
