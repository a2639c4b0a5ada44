import csv
import io
import statistics
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from trajpred.harness import (
    CSV_COLUMNS,
    ConfigError,
    ExperimentConfig,
    RunRecord,
    arm_medians,
    baseline_reports,
    check_arms,
    load_records,
    report_rows,
    rows_to_csv,
    run_ablation,
    write_report,
)
from trajpred.metrics import REPORT_COLUMNS, PredictionSet, evaluate, hitrate_curve
from trajpred.plots import arm_curves, hitrate_svg, overlay_svg, plot_hitrate_curve, plot_overlay
from trajpred.scene import SyntheticConfig, generate_synthetic

SVG = "{http://www.w3.org/2000/svg}"
GT = np.stack([np.arange(1, 13) * 1.0, np.zeros(12)], axis=1)


def tiny_config(out, seeds=(0, 1, 2)):
    return ExperimentConfig(
        dataset={"synthetic": {"count": 40}, "seed": 3},
        raster={"size": 46, "resolution": 0.75},
        pretrain={"task": "rotation4", "epochs": 1, "count": 20},
        arms=[
            {"id": "scratch", "pretrained": False, "epochs": 1, "hidden": 8},
            {"id": "pretrained", "pretrained": True, "epochs": 1, "hidden": 8},
        ],
        seeds=list(seeds),
        output_dir=str(out),
    )


@pytest.fixture(scope="module")
def ablation(tmp_path_factory):
    out = tmp_path_factory.mktemp("ablation")
    config = tiny_config(out)
    return config, run_ablation(config)


def fake_record(arm, seed, minade5, rng):
    ps = [PredictionSet(GT[None] + rng.normal(0, 2, (6, 12, 2)), np.full(6, 1 / 6)) for _ in range(4)]
    report = evaluate(ps, [GT] * 4)
    report.minade5 = minade5
    return RunRecord("h", seed, arm, "covernet", report, 0.0)


# --- arm contract ---------------------------------------------------------------


def test_arms_differing_only_in_encoder_init_accepted():
    ExperimentConfig(arms=[{"id": "a", "pretrained": False}, {"id": "b", "pretrained": True}])


def test_arms_differing_in_head_settings_rejected():
    with pytest.raises(ConfigError, match="'lr'"):
        ExperimentConfig(arms=[{"id": "a", "pretrained": False}, {"id": "b", "pretrained": True, "lr": 1e-2}])
    with pytest.raises(ConfigError, match="freeze"):
        check_arms([{"id": "a", "head": "mtp", "freeze": True}, {"id": "b", "head": "mtp", "freeze": False}])


def test_arms_with_different_heads_are_separate_comparisons():
    check_arms([{"id": "a", "head": "mtp", "lr": 1.0}, {"id": "b", "head": "covernet", "lr": 2.0}])


def test_config_validation():
    with pytest.raises(ConfigError):
        ExperimentConfig(arms=[{"id": "a"}, {"id": "a"}])
    with pytest.raises(ConfigError):
        ExperimentConfig(metrics=["accuracy"])
    with pytest.raises(ConfigError):
        ExperimentConfig(seeds=[])
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"colour": "red"})


def test_config_hash_stable_and_ignores_output_dir(tmp_path):
    a, b = tiny_config(tmp_path / "x"), tiny_config(tmp_path / "y")
    assert a.config_hash() == b.config_hash()
    assert a.config_hash() != tiny_config(tmp_path, seeds=(0,)).config_hash()
    path = tmp_path / "c.json"
    path.write_text(__import__("json").dumps(a.to_dict()))
    assert ExperimentConfig.load(path).config_hash() == a.config_hash()


# --- ablation run ---------------------------------------------------------------


def test_ablation_runs_every_arm_and_seed(ablation):
    config, records = ablation
    assert sorted((r.arm, r.seed) for r in records) == sorted((a, s) for a in ("scratch", "pretrained") for s in (0, 1, 2))
    assert all(r.config_hash == config.config_hash() for r in records)
    assert sorted(load_records(config.output_dir + "/runs"), key=lambda r: (r.arm, r.seed)) == sorted(
        records, key=lambda r: (r.arm, r.seed)
    )


def test_ablation_records_round_trip(ablation):
    _, records = ablation
    for r in records:
        assert RunRecord.from_json(r.to_json()) == r


def test_median_rows_match_independent_median(ablation):
    _, records = ablation
    rows = report_rows(records)
    for arm in ("scratch", "pretrained"):
        med = [r for r in rows if r["arm"] == arm and r["seed"] == "median"]
        assert len(med) == 1
        for col in REPORT_COLUMNS:
            values = sorted(getattr(r.report, col) for r in records if r.arm == arm)
            assert med[0][col] == values[1]  # middle of three
    assert arm_medians(records) == {
        arm: statistics.median(r.report.minade5 for r in records if r.arm == arm) for arm in ("pretrained", "scratch")
    }


def test_report_csv_layout(tmp_path):
    rng = np.random.default_rng(0)
    records = [fake_record(arm, s, float(s), rng) for arm in ("b", "a") for s in (2, 0, 1)]
    write_report(records, tmp_path / "r.csv")
    rows = list(csv.reader(io.StringIO((tmp_path / "r.csv").read_text())))
    assert tuple(rows[0]) == CSV_COLUMNS
    assert [(r[0], r[1]) for r in rows[1:]] == [
        ("a", "0"), ("a", "1"), ("a", "2"), ("a", "median"), ("b", "0"), ("b", "1"), ("b", "2"), ("b", "median")
    ]
    assert float(rows[4][CSV_COLUMNS.index("minade5")]) == 1.0
    # floats print with full round-trip precision
    assert rows_to_csv(report_rows(records)) == (tmp_path / "r.csv").read_text()


def test_baselines_order():
    reports = baseline_reports(generate_synthetic(SyntheticConfig(count=100), 2))
    assert reports["physics_oracle"].minade1 <= reports["constant_velocity"].minade1


# --- plots ----------------------------------------------------------------------


def polylines(svg, cls):
    root = ET.fromstring(svg)
    return [p for p in root.iter(f"{SVG}polyline") if p.get("class") == cls]


def legend_labels(svg):
    return [t.text for t in ET.fromstring(svg).iter(f"{SVG}text")]


def test_overlay_exact_prediction_traces_ground_truth():
    ps = PredictionSet(np.stack([GT + [0, 3], GT]), [0.2, 0.8])
    svg = overlay_svg(GT, {"perfect": ps})
    (gt_line,) = polylines(svg, "ground-truth")
    (arm_line,) = polylines(svg, "arm")
    assert arm_line.get("points") == gt_line.get("points")
    assert arm_line.get("data-arm") == "perfect"


def test_overlay_draws_set_and_legend():
    tset = GT[None] + np.arange(4)[:, None, None] * np.array([0.0, 1.0])
    ps_a, ps_b = PredictionSet.single(GT + 1), PredictionSet.single(GT - 1)
    svg = overlay_svg(GT, {"scratch": ps_a, "pretrained": ps_b}, tset)
    assert len(polylines(svg, "trajectory-set")) == 4
    assert len(polylines(svg, "arm")) == 2
    assert legend_labels(svg) == ["ground truth", "scratch", "pretrained", "trajectory set"]


def test_overlay_without_arms_and_heading_up():
    svg = overlay_svg(GT, {})
    assert polylines(svg, "arm") == []
    pts = [tuple(map(float, p.split(","))) for p in polylines(svg, "ground-truth")[0].get("points").split()]
    assert pts[-1][1] < pts[0][1]  # travelling forward is drawn upward


def test_overlay_bytes_deterministic(tmp_path):
    ps = PredictionSet(np.stack([GT, GT + 1]), [0.5, 0.5])
    plot_overlay(GT, {"a": ps}, tmp_path / "1.svg")
    plot_overlay(GT, {"a": ps}, tmp_path / "2.svg")
    assert (tmp_path / "1.svg").read_bytes() == (tmp_path / "2.svg").read_bytes()


def test_overlay_write_error_names_path(tmp_path):
    with pytest.raises(OSError, match="missing"):
        plot_overlay(GT, {}, tmp_path / "missing" / "x.svg")


def test_hitrate_curve_matches_metric(ablation, tmp_path):
    _, records = ablation
    curves = plot_hitrate_curve(records, tmp_path / "h.svg", 2.0, 10)
    assert set(curves) == {"scratch", "pretrained"}
    for arm, curve in curves.items():
        pooled = [v for r in records if r.arm == arm for v in r.report.per_instance["ranked_max_dist"]]
        assert len(curve) == 10
        assert [v for _, v in curve] == sorted(v for _, v in curve)
        hits = [float(np.mean([np.min(v[:k]) <= 2.0 for v in pooled])) for k in range(1, 11)]
        assert [v for _, v in curve] == pytest.approx(hits, abs=1e-15)
    svg = (tmp_path / "h.svg").read_text()
    assert len(polylines(svg, "curve")) == 2
    assert {"pretrained", "scratch"} <= set(legend_labels(svg))


def test_hitrate_perfect_arm_is_flat_at_one():
    pairs = [(PredictionSet.single(GT), GT)] * 3
    assert hitrate_curve(pairs, 2.0, 5) == [(k, 1.0) for k in range(1, 6)]
    rng = np.random.default_rng(1)
    record = RunRecord("h", 0, "perfect", "mtp", evaluate([PredictionSet.single(GT)] * 3, [GT] * 3), 0.0)
    assert arm_curves([record], 2.0, 5)["perfect"] == [(k, 1.0) for k in range(1, 6)]
    svg = hitrate_svg(arm_curves([record, fake_record("noisy", 0, 1.0, rng)], 2.0, 5))
    ys = {float(p.split(",")[1]) for p in polylines(svg, "curve")[1].get("points").split()}
    assert len(ys) == 1  # constant curve
