import math

import numpy as np
import pytest

import faultguard as fg


def test_combinatorial_values():
    assert fg.combinatorial_accuracy(0.604, 2) == pytest.approx(0.8432, abs=1e-4)
    assert fg.combinatorial_accuracy(0.958, 2) == pytest.approx(0.99824, abs=1e-4)
    assert fg.false_alarm_probability(0.604, 2) == pytest.approx(0.396**2, abs=1e-15)
    for p in (0.0, 0.3, 0.9, 1.0):
        for k in (1, 2, 5):
            assert fg.combinatorial_accuracy(p, k) == pytest.approx(1 - (1 - p) ** k, abs=1e-12)
    with pytest.raises(ValueError):
        fg.combinatorial_accuracy(1.5, 2)


def test_asr():
    assert fg.asr_from_predictions([0, 1, 2, 3, 4, 5, 6, 7, 8, 8, 0], 11) == pytest.approx(9 / 11)
    assert fg.asr_from_predictions([0, 1, 2, 2], 4) == 0.75


def test_project_stays_in_ball_and_box():
    rng = np.random.default_rng(0)
    x = rng.uniform(0, 1, (16, fg.NUM_FEATURES))
    v = x + rng.normal(0, 1, x.shape)
    out = fg.project(v, x, 0.2)
    assert np.max(np.abs(out - x)) <= 0.2 + 1e-12
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_synth_dataset_shapes():
    d = fg.synth_dataset(4, 40, 3.0, 1)
    windows, labels = d["train"]
    assert len(windows) == len(labels) == 34
    assert windows[0].shape == (fg.WINDOW_LEN, fg.NUM_FEATURES)
    assert set(labels) <= {0, 1, 2, 3}
    assert d["fingerprint"] == fg.synth_dataset(4, 40, 3.0, 1)["fingerprint"]


def test_config_round_trip_and_errors():
    c = fg.ExperimentConfig.parse("seed = 4\ntasks = zone\n")
    assert c.seed == 4
    again = fg.ExperimentConfig.parse(c.to_text())
    assert again.hash() == c.hash()
    with pytest.raises(fg.ConfigError, match="line 1"):
        fg.ExperimentConfig.parse("not_a_key = 1\n")


def test_tiny_pipeline_is_deterministic():
    text = "\n".join(
        [
            "tasks = zone",
            "data.synth_windows = 60",
            "predictor.hidden_size = 4",
            "predictor.epochs = 1",
            "predictor.oat_bim_steps = 2",
            "ads.epochs = 1",
            "ads.batch_size = 16",
            "ads.al_bim_steps = 2",
            "graybox.epochs = 1",
            "graybox.n_batches = 4",
            "attacks.kinds = fgsm",
            "attacks.epsilons = 0.1",
            "attacks.steps = 2",
            "eval.windows = 3",
            "eval.curve_batches = 2",
            "n_seeds = 1",
        ]
    )
    c = fg.ExperimentConfig.parse(text)
    rows, csv = fg.run_pipeline(c)
    assert rows and all(math.isfinite(r["value"]) for r in rows)
    assert fg.run_pipeline(c)[1] == csv
