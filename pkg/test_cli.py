import csv

import numpy as np
import pytest
import yaml

from dgrbench import harness
from dgrbench.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, main
from dgrbench.config import parse_config
from dgrbench.dem import build_decoding_graph, load_dem
from dgrbench.sample_loader import read_shot_dump


@pytest.fixture
def config_path(tmp_path):
    data = {
        "name": "cli",
        "code": {"distance": 3, "p": 0.03},
        "mismatch": {"kind": "random", "strength": 10},
        "shots": {"trace": 300, "eval": 300},
        "arms": ["oracle", "mismatched", "aligned"],
        "seed": 3,
    }
    path = tmp_path / "cli.yaml"
    path.write_text(yaml.safe_dump(data))
    return str(path)


def test_no_command_prints_help(capsys):
    assert main([]) == EXIT_OK
    assert "usage" in capsys.readouterr().out


def test_gen_writes_model(tmp_path, config_path):
    out = tmp_path / "model.dem"
    assert main(["gen", "--config", config_path, "--output", str(out)]) == EXIT_OK
    assert load_dem(out).num_detectors == 8 * 4


def test_gen_mismatched_model_differs(tmp_path, config_path):
    true_path, wrong_path = tmp_path / "true.dem", tmp_path / "wrong.dem"
    assert main(["gen", "--config", config_path, "--output", str(true_path)]) == EXIT_OK
    assert main(["gen", "--config", config_path, "--output", str(wrong_path), "--mismatched"]) == EXIT_OK
    assert true_path.read_text() != wrong_path.read_text()


def test_sample_then_decode(tmp_path, config_path):
    shots = tmp_path / "shots.txt"
    preds = tmp_path / "preds.csv"
    assert main(["sample", "--config", config_path, "--shots", "40", "--output", str(shots)]) == EXIT_OK
    assert len(read_shot_dump(shots)) == 40
    assert main(["decode", "--config", config_path, "--shots", str(shots), "--output", str(preds)]) == EXIT_OK
    with open(preds) as handle:
        rows = list(csv.DictReader(handle))
    assert [int(r["shot"]) for r in rows] == list(range(40))


def test_bench(tmp_path, config_path, capsys):
    out = tmp_path / "bench"
    assert main(["bench", "--config", config_path, "--out", str(out), "--arms", "oracle,aligned"]) == EXIT_OK
    assert (out / "metrics.csv").is_file()
    text = capsys.readouterr().out
    assert "oracle" in text
    assert "mismatched" not in text


def test_calibrate(config_path, capsys):
    assert main(["calibrate", "--config", config_path, "--shots", "500"]) == EXIT_OK
    assert "trigger threshold" in capsys.readouterr().out


def test_missing_config_is_config_error(tmp_path):
    assert main(["bench", "--config", str(tmp_path / "nope.yaml")]) == EXIT_CONFIG


def test_unknown_arm_is_config_error(config_path, tmp_path):
    assert main(["bench", "--config", config_path, "--out", str(tmp_path), "--arms", "oracle,psychic"]) == EXIT_CONFIG


def test_bad_sweep_values(config_path, tmp_path):
    assert main(["sweep", "--config", config_path, "--out", str(tmp_path), "--axis", "p", "--values", "a,b"]) == EXIT_CONFIG


def test_missing_shot_dump_is_runtime_error(config_path, tmp_path):
    assert main(["decode", "--config", config_path, "--shots", str(tmp_path / "none.txt")]) == EXIT_RUNTIME


def test_seed_flag_overrides_config(tmp_path, config_path):
    a, b = tmp_path / "a.txt", tmp_path / "b.txt"
    main(["sample", "--config", config_path, "--shots", "50", "--output", str(a), "--seed", "1"])
    main(["sample", "--config", config_path, "--shots", "50", "--output", str(b), "--seed", "2"])
    assert a.read_text() != b.read_text()


@pytest.mark.parametrize("shots", ["0", "-5"])
def test_non_positive_shot_count_is_config_error(tmp_path, config_path, shots):
    out = tmp_path / "s.txt"
    assert main(["sample", "--config", config_path, "--shots", shots, "--output", str(out)]) == EXIT_CONFIG


@pytest.mark.parametrize("oracle_weights", [True, False])
def test_train_nn_honours_trace_weight_switch(tmp_path, monkeypatch, oracle_weights):
    data = {
        "code": {"distance": 3, "p": 0.03},
        "mismatch": {"kind": "random", "strength": 10},
        "shots": {"trace": 200, "eval": 10, "trace_with_oracle_weights": oracle_weights},
        "train": {"batch_size": 4, "epochs": 1, "dataset_size": 8, "spsa_samples": 2, "hidden": 8},
        "seed": 5,
        "jobs": 1,
    }
    path = tmp_path / "train.yaml"
    path.write_text(yaml.safe_dump(data))
    traced = []
    real_trace = harness.trace

    def recording_trace(model, graph, *args, **kwargs):
        traced.append(graph.weights.copy())
        return real_trace(model, graph, *args, **kwargs)

    monkeypatch.setattr(harness, "trace", recording_trace)
    out = tmp_path / "nn"
    assert main(["train-nn", "--config", str(path), "--out", str(out)]) == EXIT_OK
    assert (out / "nn_params.npz").is_file()
    assert (out / "loss_curve.csv").is_file()

    true_model, believed_model = harness.build_models(parse_config(data))
    expected = build_decoding_graph(true_model if oracle_weights else believed_model)
    (weights,) = traced
    np.testing.assert_array_equal(weights, expected.weights)
