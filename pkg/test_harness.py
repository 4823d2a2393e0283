import csv
import json
import math
from pathlib import Path

import numpy as np
import pytest

from dgrbench import harness
from dgrbench.config import AlignmentPolicy, OutputConfig, ReweightPolicy, load_config, parse_config
from dgrbench.dem import build_decoding_graph, parse_dem
from dgrbench.errors import BracketError, ConfigError
from dgrbench.harness import (
    Arm,
    derive_seed,
    estimate_ler,
    estimate_threshold,
    evaluate_arms,
    find_crossing,
    run_experiment,
    sweep,
    trace,
    wilson_interval,
)
from dgrbench.matcher import decode
from dgrbench.sampler import sample_batch
from dgrbench.surfgen import SurfaceCodeSpec, generate_surface_pheno
from dgrbench.tracer import TraceStore, weight_mse

CONFIG_DIR = Path(__file__).parent / "configs"


def small_config(**overrides):
    data = {
        "name": "small",
        "code": {"distance": 3, "p": 0.03},
        "mismatch": {"kind": "random", "strength": 10},
        "shots": {"trace": 500, "eval": 500},
        "arms": ["oracle", "mismatched", "aligned"],
        "seed": 7,
        "jobs": 1,
    }
    data.update(overrides)
    return parse_config(data)


class NeverFlip:
    name = "never"

    def predict(self, detectors):
        return 0, False


def test_wilson_interval():
    lo, hi = wilson_interval(0, 100)
    assert lo == 0.0
    assert 0.03 < hi < 0.04
    lo, hi = wilson_interval(50, 100)
    assert 0.5 - lo == pytest.approx(hi - 0.5)
    with pytest.raises(ValueError):
        wilson_interval(0, 0)


def test_derive_seed():
    assert derive_seed(1, "trace") == derive_seed(1, "trace")
    assert derive_seed(1, "trace") != derive_seed(1, "eval")
    assert derive_seed(1, "trace") != derive_seed(2, "trace")


def test_constant_predictor_ler():
    model = parse_dem("error(0.1) D0 L0")
    ler, (lo, hi) = estimate_ler(model, NeverFlip(), 20_000, seed=3)
    assert lo <= 0.1 <= hi
    assert lo <= ler <= hi


def test_blocks_and_workers_do_not_change_counts(monkeypatch, d3_r1_model, d3_r1_graph):
    arms = [Arm("oracle", d3_r1_graph)]
    whole = evaluate_arms(d3_r1_model, arms, 300, seed=9)[0]
    monkeypatch.setattr(harness, "BLOCK_SHOTS", 70)
    split = evaluate_arms(d3_r1_model, arms, 300, seed=9)[0]
    pooled = evaluate_arms(d3_r1_model, arms, 300, seed=9, jobs=2)[0]
    assert (whole.shots, whole.errors) == (split.shots, split.errors) == (pooled.shots, pooled.errors)
    assert whole.shots == 300


def test_arms_share_the_shot_stream(d3_r1_model, d3_r1_graph):
    same = evaluate_arms(d3_r1_model, [Arm("a", d3_r1_graph), Arm("b", d3_r1_graph)], 400, seed=4)
    assert same[0].errors == same[1].errors


def test_trace_window_keeps_tail(d3_r1_model, d3_r1_graph):
    policy = ReweightPolicy(alignment=AlignmentPolicy(window=100))
    store = trace(d3_r1_model, d3_r1_graph, 500, seed=2, policy=policy)
    expected = TraceStore(d3_r1_graph)
    for shot in sample_batch(d3_r1_model, 100, seed=2, start=400):
        expected.record(decode(d3_r1_graph, shot.detectors))
    assert store.same_counts(expected)


def test_trace_without_window(monkeypatch, d3_r1_model, d3_r1_graph):
    serial = trace(d3_r1_model, d3_r1_graph, 250, seed=2)
    monkeypatch.setattr(harness, "BLOCK_SHOTS", 60)
    pooled = trace(d3_r1_model, d3_r1_graph, 250, seed=2, jobs=2)
    assert serial.trials == 250
    assert serial.same_counts(pooled)


def test_find_crossing_recovers_known_point():
    p_values = [0.01, 0.02, 0.04, 0.05]
    large = [p**3 for p in p_values]
    small = [p**3 * 0.03 / p for p in p_values]
    assert find_crossing(p_values, small, large) == pytest.approx(0.03)


def test_find_crossing_skips_zero_rates():
    p_values = [0.005, 0.01, 0.02, 0.04]
    small = [0.0, 1e-4, 1e-3, 0.2]
    large = [0.0, 1e-5, 1e-4, 0.3]
    p = find_crossing(p_values, small, large)
    assert 0.02 < p < 0.04


def test_find_crossing_without_bracket():
    with pytest.raises(BracketError):
        find_crossing([0.01, 0.02, 0.03], [0.2, 0.3, 0.4], [0.1, 0.2, 0.3])
    with pytest.raises(BracketError):
        find_crossing([0.01, 0.02, 0.03], [0.0, 0.0, 0.1], [0.0, 0.0, 0.2])


def test_identity_mismatch_matches_oracle():
    report = run_experiment(small_config(mismatch={"kind": "random", "strength": 1.0}, arms=["oracle", "mismatched"]))
    assert report.row("oracle").errors == report.row("mismatched").errors


def test_run_experiment_writes_report(tmp_path):
    config = small_config()
    report = run_experiment(config, out_dir=tmp_path)
    assert [r.arm for r in report.rows] == ["oracle", "mismatched", "aligned"]
    assert all(r.shots == 500 for r in report.rows)
    assert report.row("aligned").trace_trials == 500
    assert report.row("oracle").trace_trials == 0
    for row in report.rows:
        assert row.ci_low <= row.ler <= row.ci_high

    with open(tmp_path / "metrics.csv") as handle:
        rows = list(csv.DictReader(handle))
    assert [r["arm"] for r in rows] == ["oracle", "mismatched", "aligned"]
    assert int(rows[0]["errors"]) == report.row("oracle").errors

    data = json.loads((tmp_path / "report.json").read_text())
    assert data["seed"] == 7
    assert data["config_hash"] == report.config_hash
    assert run_experiment(config).rows == report.rows


def test_correlation_arms(tmp_path):
    config = small_config(
        arms=["aligned", "aligned+heuristic", "aligned+nn"],
        reweight={"correlation": {"trigger": 3}},
        train={"batch_size": 4, "epochs": 1, "dataset_size": 8, "spsa_samples": 2, "hidden": 8},
        output={"heatmap": True, "trace_counts": True},
    )
    report = run_experiment(config, out_dir=tmp_path)
    assert [r.arm for r in report.rows] == ["aligned", "aligned+heuristic", "aligned+nn"]
    assert report.trigger_threshold == 3
    assert report.row("aligned").trigger_rate == 0.0
    assert report.row("aligned+heuristic").trigger_rate == report.row("aligned+nn").trigger_rate
    for name in ("heatmap.csv", "edge_counts.csv", "pair_counts.csv", "loss_curve.csv"):
        assert (tmp_path / name).is_file()


def test_sweep_over_p(tmp_path):
    out = tmp_path / "sweep.csv"
    reports = sweep(small_config(arms=["oracle"]), "p", [0.02, 0.04], out_path=out)
    assert [r.axis_value for r in reports] == [0.02, 0.04]
    assert all(r.axis == "p" for r in reports)
    with open(out) as handle:
        rows = list(csv.DictReader(handle))
    assert [float(r["p"]) for r in rows] == [0.02, 0.04]


def test_sweep_needs_values():
    with pytest.raises(ConfigError):
        sweep(small_config(), "p", [])


def test_threshold_needs_grid():
    with pytest.raises(ConfigError):
        estimate_threshold(small_config(), [3], [0.02, 0.03, 0.04])
    with pytest.raises(ConfigError):
        estimate_threshold(small_config(), [3, 5], [0.02, 0.03])


@pytest.mark.slow
def test_alignment_recovers_random_mismatch():
    config = parse_config(
        {
            "code": {"distance": 5, "p": 0.01},
            "mismatch": {"kind": "random", "strength": 10},
            "shots": {"trace": 1_000_000, "eval": 1_000_000},
            "arms": ["oracle", "mismatched", "aligned"],
            "seed": 2024,
        }
    )
    report = run_experiment(config, jobs=4)
    oracle = report.row("oracle")
    mismatched = report.row("mismatched")
    assert mismatched.ler / oracle.ler >= 1.2
    assert mismatched.ci_low > oracle.ci_high
    assert report.ler("aligned") / oracle.ler <= 1.15


@pytest.mark.slow
def test_worst_case_mismatch_and_recovery():
    config = parse_config(
        {
            "code": {"distance": 5, "p": 0.003},
            "mismatch": {"kind": "worst_case", "strength": 10},
            "shots": {"trace": 1_000_000, "eval": 1_000_000},
            "arms": ["oracle", "mismatched", "aligned"],
            "seed": 2024,
        }
    )
    report = run_experiment(config, jobs=4)
    assert report.ler("mismatched") / report.ler("oracle") >= 5
    assert report.ler("aligned") / report.ler("oracle") <= 1.3


@pytest.mark.slow
def test_threshold_crossings():
    config = small_config(shots={"trace": 100_000, "eval": 100_000}, arms=["oracle", "mismatched"])
    crossings = estimate_threshold(config, [3, 5], [0.02, 0.03, 0.04], jobs=4)
    assert 0.02 <= crossings["oracle"] <= 0.045
    assert crossings["mismatched"] < crossings["oracle"]


@pytest.mark.slow
def test_weight_error_shrinks_with_trials():
    model = generate_surface_pheno(SurfaceCodeSpec(distance=5, p=0.001))
    graph = build_decoding_graph(model)
    stores = [trace(model, graph, t, seed=5, jobs=4) for t in (10**3, 10**4, 10**5, 10**6)]
    errors = [weight_mse(store, graph, min_p=5e-4) for store in stores]
    assert errors[0] > errors[1] > errors[2] > errors[3]
    assert math.isfinite(errors[-1])
    tracked = graph.probabilities >= 5e-4
    estimated = stores[-1].estimate_edge_probs()
    relative = np.abs(estimated[tracked] - graph.probabilities[tracked]) / graph.probabilities[tracked]
    assert relative.max() <= 0.25


@pytest.mark.slow
def test_alignment_holds_across_mismatch_strengths():
    config = parse_config(
        {
            "code": {"distance": 5, "p": 0.001},
            "shots": {"trace": 1_000_000, "eval": 1_000_000},
            "arms": ["oracle", "aligned"],
            "seed": 2024,
        }
    )
    reports = sweep(config, "N", [10, 100, 500], jobs=4)
    assert [r.axis_value for r in reports] == [10, 100, 500]
    for report in reports:
        # paired shots: the ratio may not sit significantly above 1.2
        assert report.row("aligned").ci_low <= 1.2 * report.row("oracle").ci_high


@pytest.mark.slow
def test_trace_trials_needed_do_not_grow_with_distance():
    grid = [100, 300, 1000, 3000, 10_000, 30_000, 100_000]
    needed = {}
    for d in (3, 5, 7):
        config = parse_config(
            {
                "code": {"distance": d, "p": 0.001},
                "mismatch": {"kind": "random", "strength": 10},
                "shots": {"eval": 1_000_000},
                "arms": ["oracle", "aligned"],
                "seed": 2024,
            }
        )
        reports = sweep(config, "T_trace", grid, jobs=4)
        if reports[0].row("oracle").errors < 5:
            # logical errors below what the evaluation budget resolves
            continue
        for report in reports:
            if report.row("aligned").ci_low <= 1.2 * report.row("oracle").ci_high:
                needed[d] = report.axis_value
                break
        else:
            pytest.fail(f"d={d}: aligned decoder never came within 1.2x of the oracle")
    assert len(needed) >= 2
    assert max(needed.values()) < 10 * min(needed.values())


@pytest.mark.slow
def test_correlation_reweighting_beats_alignment_on_y_bias():
    config = load_config(CONFIG_DIR / "ybias_d3.yaml").model_copy(update={"output": OutputConfig()})
    report = run_experiment(config, jobs=4)
    aligned = report.row("aligned")
    assert report.ler("aligned+heuristic") / aligned.ler <= 0.99
    nn = report.row("aligned+nn")
    assert nn.ler / aligned.ler <= 0.97
    assert nn.ci_high < aligned.ci_low
