import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from platoon_gpmpc.errors import DimensionMismatch, SeriesTooShort
from platoon_gpmpc.gp import GpDataset, GpHyperparams, GpModel, GpPrediction
from platoon_gpmpc.hv_model import (PUBLISHED_ARX, ArxCoefficients, HvModel, VelocityHistory,
                                    VelocitySeries, arx_step, build_discrepancy_dataset,
                                    combined_predict, one_step_predictions, read_series, rmse,
                                    stride_indices, write_series)

finite = st.floats(-40, 40, allow_nan=False)


def arx_rollout(lead, c=PUBLISHED_ARX, v0=0.0):
    """Plain-loop replay of the recursion, used as an oracle."""
    v = [v0] * 4
    for k in range(4, len(lead)):
        v.append(sum(-ci * v[k - i - 1] for i, ci in enumerate(c.c))
                 + sum(bi * lead[k - i - 1] for i, bi in enumerate(c.b)))
    return np.array(v)


class ConstantPredictor:
    def __init__(self, mean, var):
        self.mean, self.var = mean, var

    def predict(self, x, include_noise=False):
        return GpPrediction(self.mean, self.var)


def test_published_coefficients_have_unit_dc_gain():
    assert 0.9 <= PUBLISHED_ARX.dc_gain() <= 1.1


def test_zero_history_gives_zero():
    assert arx_step(PUBLISHED_ARX, VelocityHistory.constant(0.0, 0.0)) == 0.0


def test_steady_state_history():
    assert arx_step(PUBLISHED_ARX, VelocityHistory.constant(10.0, 10.0)) == pytest.approx(10.0, abs=0.05)


def test_hand_arithmetic_lead_step():
    h = VelocityHistory((10.0,) * 4, (15.0, 10.0, 10.0, 10.0))
    assert arx_step(PUBLISHED_ARX, h) == pytest.approx(10.0315, abs=1e-6)


def test_history_validation():
    with pytest.raises(DimensionMismatch):
        VelocityHistory((1.0, 2.0), (1.0, 2.0, 3.0, 4.0))
    with pytest.raises(DimensionMismatch):
        ArxCoefficients((1.0,) * 3, (1.0,) * 4)


@given(st.lists(finite, min_size=16, max_size=16), st.floats(-3, 3), st.floats(-3, 3))
def test_arx_is_linear(v, a, b):
    h1 = VelocityHistory(v[0:4], v[4:8])
    h2 = VelocityHistory(v[8:12], v[12:16])
    mix = VelocityHistory(tuple(a * x + b * y for x, y in zip(h1.hv, h2.hv)),
                          tuple(a * x + b * y for x, y in zip(h1.lead, h2.lead)))
    expected = a * arx_step(PUBLISHED_ARX, h1) + b * arx_step(PUBLISHED_ARX, h2)
    assert arx_step(PUBLISHED_ARX, mix) == pytest.approx(expected, abs=1e-12 * (1 + 200 * max(map(abs, v))))


def test_shifted_history_order():
    h = VelocityHistory((1.0, 2.0, 3.0, 4.0), (5.0, 6.0, 7.0, 8.0)).shifted(0.5, 4.5)
    assert h.hv == (0.5, 1.0, 2.0, 3.0) and h.lead == (4.5, 5.0, 6.0, 7.0)
    np.testing.assert_array_equal(h.gp_input(), [0.5, 4.5])


def test_dataset_from_exact_arx_series_is_zero(rng):
    lead = np.concatenate([np.zeros(4), rng.uniform(5, 20, 200)])
    v = arx_rollout(lead)
    data = build_discrepancy_dataset(v, lead, PUBLISHED_ARX)
    assert np.max(np.abs(data.targets)) < 1e-10


def test_dataset_with_offset_matches_replay(rng):
    lead = np.concatenate([np.zeros(4), rng.uniform(5, 20, 100)])
    v = arx_rollout(lead) + 0.5
    data = build_discrepancy_dataset(v, lead, PUBLISHED_ARX)
    c, b = PUBLISHED_ARX.c, PUBLISHED_ARX.b
    replay = [v[j] - (sum(-c[i] * v[j - i - 1] for i in range(4)) + sum(b[i] * lead[j - i - 1] for i in range(4)))
              for j in range(4, len(v))]
    np.testing.assert_allclose(data.targets, replay, atol=1e-12)
    # a constant offset passes through the AR side scaled by 1 + sum(c)
    np.testing.assert_allclose(data.targets, 0.5 * (1.0 + sum(c)), atol=1e-10)
    np.testing.assert_array_equal(data.inputs[:, 0], v[3:-1])
    np.testing.assert_array_equal(data.inputs[:, 1], lead[3:-1])


def test_dataset_boundary_lengths():
    assert len(build_discrepancy_dataset(np.arange(5.0), np.arange(5.0), PUBLISHED_ARX)) == 1
    with pytest.raises(SeriesTooShort):
        build_discrepancy_dataset(np.arange(4.0), np.arange(4.0), PUBLISHED_ARX)
    with pytest.raises(DimensionMismatch):
        build_discrepancy_dataset(np.arange(6.0), np.arange(5.0), PUBLISHED_ARX)


def test_combined_predict_with_prior_gp():
    h = VelocityHistory.constant(12.0, 12.0)
    prior = GpModel.prior(GpHyperparams(0.7, np.array([1.0, 1.0]), 0.1))
    pred = combined_predict(HvModel(PUBLISHED_ARX, prior), h)
    assert pred.mean == pytest.approx(arx_step(PUBLISHED_ARX, h))
    assert pred.variance == pytest.approx(0.7)


def test_combined_predict_is_additive():
    h = VelocityHistory.constant(10.0, 10.0)
    arx = arx_step(PUBLISHED_ARX, h)
    pred = combined_predict(HvModel(PUBLISHED_ARX, ConstantPredictor(-0.4, 0.09)), h)
    assert pred.mean == pytest.approx(arx - 0.4)
    assert pred.variance == pytest.approx(0.09)


def test_one_step_predictions_match_loop(rng):
    lead = rng.uniform(5, 20, 40)
    v = rng.uniform(5, 20, 40)
    data = GpDataset(rng.uniform(5, 20, (10, 2)), rng.standard_normal(10))
    model = HvModel(PUBLISHED_ARX, GpModel.build(data, GpHyperparams(0.5, np.array([9.0, 9.0]), 0.1)))
    measured, arx, mean, var = one_step_predictions(v, lead, PUBLISHED_ARX, model)
    for j in range(4, 40):
        h = VelocityHistory(v[j - 4:j][::-1], lead[j - 4:j][::-1])
        p = combined_predict(model, h)
        assert measured[j - 4] == v[j]
        assert arx[j - 4] == pytest.approx(arx_step(PUBLISHED_ARX, h), abs=1e-12)
        assert mean[j - 4] == pytest.approx(p.mean, abs=1e-12)
        assert var[j - 4] == pytest.approx(p.variance, abs=1e-12)


def test_rmse_examples():
    assert rmse([1, 2, 3], [1, 2, 3]) == 0.0
    assert rmse(np.arange(7.0) + 1.0, np.arange(7.0)) == pytest.approx(1.0)
    assert rmse([1, 2, 3], [1, 2, 5]) == pytest.approx(np.sqrt(4 / 3))
    with pytest.raises(DimensionMismatch):
        rmse([1, 2], [1, 2, 3])
    with pytest.raises(DimensionMismatch):
        rmse([], [])


def test_stride_indices():
    idx = stride_indices(1000, 0.2)
    assert idx.size == 200 and np.all(np.diff(idx) == 5)


def test_series_file_round_trip(tmp_path, rng):
    s = VelocitySeries(np.arange(5) * 0.25, rng.uniform(0, 20, 5), rng.uniform(0, 20, 5))
    write_series(tmp_path / "s.csv", s, preamble="seed: 3")
    text = (tmp_path / "s.csv").read_text()
    assert text.startswith("# seed: 3\nt,v_H,v_AV\n")
    back = read_series(tmp_path / "s.csv")
    np.testing.assert_array_equal(back.v_hv, s.v_hv)
    np.testing.assert_array_equal(back.v_lead, s.v_lead)
