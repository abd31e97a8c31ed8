import dataclasses

import numpy as np
import pytest

from platoon_gpmpc.datagen import (CorpusConfig, DriverResponseConfig, ScenarioProfile,
                                   generate_lead_profile, load_manifest, make_corpus,
                                   simulate_ground_truth_driver)
from platoon_gpmpc.gp import GpDataset, TrainerOptions, fit
from platoon_gpmpc.hv_model import (PUBLISHED_ARX, build_discrepancy_dataset, one_step_predictions,
                                    rmse, stride_indices)

DT = 0.25


def test_single_plateau_is_constant_after_ramp():
    lead = generate_lead_profile(ScenarioProfile(duration=60.0, plateaus=(10.0,), plateau_time=(20.0, 30.0)))
    ramp = int(np.ceil(10.0 / (1.5 * DT)))
    np.testing.assert_array_equal(lead[ramp:], 10.0)


def test_profile_visits_every_plateau():
    lead = generate_lead_profile(ScenarioProfile(seed=4))
    for v in (10.0, 15.0, 20.0):
        assert np.any(np.abs(lead - v) <= 0.1)


def test_ramps_respect_acceleration_limit():
    p = ScenarioProfile(seed=2)
    lead = generate_lead_profile(p)
    assert np.max(np.abs(np.diff(lead))) <= p.ramp_accel * DT + 1e-12
    assert p.ramp_accel <= 5.0


def _plateau_order(lead):
    order = []
    for v in lead:
        if v in (10.0, 15.0, 20.0) and (not order or order[-1] != v):
            order.append(v)
    return order


def test_seeds_change_order_not_values():
    a = generate_lead_profile(ScenarioProfile(seed=0))
    b = generate_lead_profile(ScenarioProfile(seed=1))
    assert _plateau_order(a) != _plateau_order(b)
    assert set(_plateau_order(a)) == set(_plateau_order(b)) == {10.0, 15.0, 20.0}
    np.testing.assert_array_equal(a, generate_lead_profile(ScenarioProfile(seed=0)))


def test_short_plateaus_rejected():
    with pytest.raises(ValueError):
        ScenarioProfile(plateau_time=(10.0, 30.0))


def test_driver_delay_semantics():
    cfg = DriverResponseConfig(delay=1.0, noise_std=0.0, nonlinearity=0.0)
    lead = np.concatenate([np.zeros(8), np.full(40, 10.0)])
    v = simulate_ground_truth_driver(cfg, lead, DT)
    start = 8  # first nonzero lead sample
    assert np.all(v[:start + 4] == 0.0)
    assert v[start + 5] > 0.0


def test_delay_must_be_whole_steps():
    with pytest.raises(ValueError):
        DriverResponseConfig(delay=0.3).delay_steps(DT)


def test_unit_gain_steady_state():
    v = simulate_ground_truth_driver(DriverResponseConfig(), np.full(400, 15.0), DT, seed=1)
    assert np.mean(v[200:]) == pytest.approx(15.0, abs=0.1)


def test_output_within_velocity_bounds():
    lead = generate_lead_profile(ScenarioProfile(seed=5))
    v = simulate_ground_truth_driver(DriverResponseConfig(noise_std=1.0), lead, DT, seed=5)
    assert v.min() >= 0.0 and v.max() <= 35.0


def _clean_driver():
    return DriverResponseConfig(noise_std=0.0, nonlinearity=0.0)


def test_clean_driver_is_close_to_arx_one_step():
    lead = generate_lead_profile(ScenarioProfile(seed=3))
    v = simulate_ground_truth_driver(_clean_driver(), lead, DT)
    measured, arx, _, _ = one_step_predictions(v, lead, PUBLISHED_ARX)
    assert rmse(arx, measured) < 0.05


def test_clean_driver_leaves_little_for_the_gp():
    lead = generate_lead_profile(ScenarioProfile(seed=3))
    v = simulate_ground_truth_driver(_clean_driver(), lead, DT)
    data = build_discrepancy_dataset(v, lead, PUBLISHED_ARX)
    data = data.subset(stride_indices(len(data), 0.2))
    model = fit(data, opts=TrainerOptions(restarts=2))
    g = np.linspace(0, 35, 15)
    mean = model.predict(np.array([(a, b) for a in g for b in g])).mean
    assert model.hyper.signal_var < 1e-3 or np.max(np.abs(mean)) < 0.05


def test_corpus_layout_and_reproducibility(tmp_path):
    cfg = CorpusConfig(profile=dataclasses.replace(ScenarioProfile(), duration=120.0))
    make_corpus(tmp_path / "a", cfg)
    make_corpus(tmp_path / "b", cfg)
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert files == ["manifest.yaml"] + [f"set_{i:02d}.csv" for i in range(9)]
    for name in files:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    manifest = load_manifest(tmp_path / "a" / "manifest.yaml")
    roles = [s["role"] for s in manifest["sets"]]
    assert roles == ["train"] * 6 + ["test"] * 3
    first = manifest["sets"][0]
    assert first["train_indices"][:3] == [0, 5, 10]
    assert len(first["train_indices"]) == len(range(0, first["samples"] - 4, 5))


def test_split_must_add_up():
    with pytest.raises(ValueError):
        CorpusConfig(n_sets=9, split=(6, 2))
