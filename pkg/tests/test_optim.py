import numpy as np
import pytest

from mega.optim import AdamWState, TrainHyper, adamw_step
from mega.tensor import Tensor
from mega.util import ConfigError


def make_params(values):
    return {k: Tensor(np.array(v, dtype=np.float64), requires_grad=True) for k, v in values.items()}


def test_zero_grad_no_decay_is_fixed_point():
    params = make_params({"w": [1.0, -2.0, 3.0]})
    before = params["w"].data.copy()
    hyper = TrainHyper(learning_rate=0.1, epochs=1, weight_decay=0.0)
    adamw_step(params, {"w": np.zeros(3)}, AdamWState(), hyper)
    np.testing.assert_array_equal(params["w"].data, before)


def test_first_step_closed_form():
    # with bias correction, m_hat/sqrt(v_hat) = g/|g| on step one
    g = np.array([0.5, -0.25, 2.0])
    params = make_params({"w": [0.0, 0.0, 0.0]})
    hyper = TrainHyper(learning_rate=1e-2, epochs=1, weight_decay=0.0, eps=1e-12)
    adamw_step(params, {"w": g}, AdamWState(), hyper)
    expected = -hyper.learning_rate * g / (np.abs(g) + hyper.eps)
    np.testing.assert_allclose(params["w"].data, expected, rtol=1e-9)


def test_decay_only_scales_params():
    params = make_params({"w": [4.0, -8.0]})
    hyper = TrainHyper(learning_rate=0.1, epochs=1, weight_decay=0.5)
    adamw_step(params, {"w": np.zeros(2)}, AdamWState(), hyper)
    np.testing.assert_allclose(params["w"].data, np.array([4.0, -8.0]) * (1 - 0.1 * 0.5), rtol=1e-12)


def test_determinism_and_state_evolution():
    def run():
        rng = np.random.default_rng(0)
        params = make_params({"a": rng.normal(size=4), "b": rng.normal(size=(2, 2))})
        state = AdamWState()
        hyper = TrainHyper(learning_rate=3e-3, epochs=1)
        for _ in range(5):
            grads = {k: rng.normal(size=p.data.shape) for k, p in params.items()}
            adamw_step(params, grads, state, hyper)
        return {k: p.data.copy() for k, p in params.items()}, state.step_count

    r1, s1 = run()
    r2, s2 = run()
    assert s1 == s2 == 5
    for k in r1:
        np.testing.assert_array_equal(r1[k], r2[k])


def test_untouched_params_not_decayed():
    params = make_params({"w": [1.0], "frozen": [5.0]})
    hyper = TrainHyper(learning_rate=0.1, epochs=1, weight_decay=0.5)
    adamw_step(params, {"w": np.array([0.3])}, AdamWState(), hyper)
    assert params["frozen"].data[0] == 5.0


def test_shape_mismatch_raises():
    params = make_params({"w": [1.0, 2.0]})
    with pytest.raises(ValueError):
        adamw_step(params, {"w": np.zeros(3)}, AdamWState(), TrainHyper(1e-3, 1))


def test_hyper_validation():
    with pytest.raises(ConfigError):
        TrainHyper(learning_rate=-1.0, epochs=1)
    with pytest.raises(ConfigError):
        TrainHyper(learning_rate=1e-3, epochs=0)
    with pytest.raises(ConfigError):
        TrainHyper(learning_rate=1e-3, epochs=1, beta1=1.0)
    with pytest.raises(ConfigError):
        TrainHyper(learning_rate=1e-3, epochs=1, weight_decay=-0.1)
