import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qsrid.model import Dataset, StateSpaceModel, Trajectory
from qsrid.simulate import InputSignal, example1_system, simulate_linear, simulate_nonlinear
from qsrid.sysid import (
    FitConfig,
    IdentificationError,
    companion_form,
    d2c,
    estimate_lipschitz,
    evaluate_model,
    fit_baseline,
    nrmse_fit,
)


def rich_dataset(model, count=2, duration=20.0, dt=0.01, x0=None):
    trs = []
    for k in range(count):
        u = InputSignal.multisine([1.0, 0.7, 0.5, 0.3], [0.03, 0.17, 0.6, 2.1], duration, dt, seed=k)
        trs.append(simulate_linear(model, np.zeros(model.n) if x0 is None else x0, u))
    return Dataset(trs)


def rel_markov_error(fitted, truth, k=10):
    mf, mt = fitted.markov_parameters(k), truth.markov_parameters(k)
    return float(np.max(np.abs(mf - mt) / np.maximum(np.abs(mt), 1e-300)))


# ---------------------------------------------------------------- d2c etc

def test_d2c_scalar_log():
    A, B = d2c([[math.exp(-0.1)]], [[1.0 - math.exp(-0.1)]], 0.1)
    assert A[0, 0] == pytest.approx(-1.0, abs=1e-10)
    assert B[0, 0] == pytest.approx(1.0, abs=1e-10)


@pytest.mark.parametrize("Ad", [[[-0.5]], [[0.0]]])
def test_d2c_rejects_negative_real_axis(Ad):
    with pytest.raises(IdentificationError, match="smaller dt"):
        d2c(Ad, [[1.0]], 0.1)


def test_companion_form_preserves_transfer():
    model = StateSpaceModel([[-1.0, 2.0], [0.0, -3.0]], [[1.0], [1.0]], [[1.0, -1.0]], [[0.5]])
    comp = companion_form(model)
    np.testing.assert_allclose(comp.A[0], [0.0, 1.0], atol=1e-15)
    np.testing.assert_allclose(comp.B.ravel(), [0.0, 1.0])
    for s in (0.1j, 1.0 + 2j, 10j):
        np.testing.assert_allclose(comp.transfer(s), model.transfer(s), rtol=1e-12)


def test_nrmse_fit_values():
    y = np.array([[0.0], [1.0], [2.0]])
    assert nrmse_fit(y, y) == 100.0
    assert nrmse_fit(y, np.full_like(y, 1.0)) == pytest.approx(0.0, abs=1e-12)


# -------------------------------------------------------------- round trip

@pytest.mark.parametrize("method", ["arx_ls", "hankel_svd"])
def test_first_order_round_trip(method):
    truth = StateSpaceModel(-1.0, 1.0, 1.0, 0.0)
    data = rich_dataset(truth)
    res = fit_baseline(data, FitConfig(order=1, method=method))
    assert rel_markov_error(res.model, truth) < 1e-4
    y2 = sum(float(np.sum(tr.y ** 2)) for tr in data)
    assert res.delta_y_bar < 1e-6 * y2


@pytest.mark.parametrize("method", ["arx_ls", "hankel_svd"])
def test_second_order_round_trip_with_initial_state(method):
    truth = StateSpaceModel([[0.0, 1.0], [-2.0, -0.8]], [[0.0], [1.0]], [[1.0, 0.4]], [[0.3]])
    data = rich_dataset(truth, x0=np.array([0.2, -0.1]))
    res = fit_baseline(data, FitConfig(order=2, method=method))
    assert rel_markov_error(res.model, truth) < 1e-4
    assert res.model.D[0, 0] == pytest.approx(0.3, abs=1e-6)
    assert all(f > 99.9 for f in res.nrmse_fit)
    # delta_y_bar is the re-simulated residual
    again = evaluate_model(res.model, data)
    assert again.delta_y_bar == pytest.approx(res.delta_y_bar, abs=1e-9)


def test_static_gain_round_trip():
    trs = []
    for k in range(2):
        u = InputSignal.multisine([1.0, 0.5, 0.3], [0.05, 0.3, 1.1], 20.0, 0.01, seed=k).samples()
        trs.append(Trajectory(0.01, u, 2.0 * u))
    res = fit_baseline(Dataset(trs), FitConfig(order=1, method="hankel_svd"))
    assert res.model.D[0, 0] == pytest.approx(2.0, abs=1e-6)
    dyn = max(abs((res.model.transfer(1j * w) - res.model.D)[0, 0]) for w in np.logspace(-3, 3, 61))
    assert dyn < 1e-9


def test_mimo_hankel_round_trip():
    truth = StateSpaceModel([[-1.0, 0.5], [0.0, -2.0]], [[1.0, 0.0], [0.0, 1.0]],
                            [[1.0, 0.0], [0.3, 1.0]], [[0.0, 0.1], [0.0, 0.0]])
    trs = []
    for k in range(2):
        u = InputSignal.prbs(1.0, 20.0, 0.01, seed=k, hold_samples=7, channels=2)
        trs.append(simulate_linear(truth, np.zeros(2), u))
    res = fit_baseline(Dataset(trs), FitConfig(order=2, method="hankel_svd"))
    np.testing.assert_allclose(res.model.markov_parameters(5), truth.markov_parameters(5),
                               rtol=1e-4, atol=1e-8)
    with pytest.raises(IdentificationError, match="hankel_svd"):
        fit_baseline(Dataset(trs), FitConfig(order=2, method="arx_ls"))


def test_fit_errors():
    truth = StateSpaceModel(-1.0, 1.0, 1.0, 0.0)
    tiny = Dataset([simulate_linear(truth, [0.0], InputSignal.step(1.0, 0.1, 0.01))])
    with pytest.raises(IdentificationError, match="floor"):
        fit_baseline(tiny, FitConfig(order=2))
    flat = Dataset([simulate_linear(truth, [0.0], InputSignal.zero(5.0, 0.01))])
    with pytest.raises(IdentificationError):
        fit_baseline(flat, FitConfig(order=2))
    with pytest.raises(ValueError):
        FitConfig(order=0)
    with pytest.raises(ValueError):
        FitConfig(order=2, method="n4sid")


def test_example1_baseline_fit_quality():
    sys_ = example1_system()
    trs = [simulate_nonlinear(sys_, [0.0, 0.0],
                              InputSignal.multisine([0.1] * 5, [0.02, 0.05, 0.1, 0.2, 0.5], 40.0, 0.01,
                                                    seed=s)) for s in range(3)]
    res = fit_baseline(Dataset(trs), FitConfig(order=2))
    assert res.model.n == 2 and res.model.is_hurwitz()
    assert min(res.nrmse_fit) > 70.0


# --------------------------------------------------------------- Lipschitz

def test_lipschitz_constant_signals():
    a = Trajectory(0.1, np.ones(4), 3.0 * np.ones(4))
    b = Trajectory(0.1, 2.0 * np.ones(4), 5.0 * np.ones(4))
    assert estimate_lipschitz(Dataset([a, b])) == pytest.approx(2.0, abs=1e-12)
    assert estimate_lipschitz(Dataset([a, b]), norm="sup") == pytest.approx(2.0, abs=1e-12)


def test_lipschitz_static_gain_and_pairs():
    rng = np.random.default_rng(0)
    trs = [Trajectory(0.1, u, -1.5 * u) for u in rng.normal(size=(4, 50))]
    L, pairs = estimate_lipschitz(Dataset(trs), return_pairs=True)
    assert L == pytest.approx(1.5, abs=1e-9)
    assert pairs == 6


def test_lipschitz_errors():
    a = Trajectory(0.1, np.ones(4), np.ones(4))
    with pytest.raises(ValueError):
        estimate_lipschitz(Dataset([a]))
    with pytest.raises(ValueError, match="identical"):
        estimate_lipschitz(Dataset([a, a]))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_lipschitz_symmetric_and_monotone(seed):
    rng = np.random.default_rng(seed)
    trs = [Trajectory(0.1, rng.normal(size=20), rng.normal(size=20)) for _ in range(4)]
    L3 = estimate_lipschitz(Dataset(trs[:3]))
    assert estimate_lipschitz(Dataset(trs[:3][::-1])) == L3
    assert estimate_lipschitz(Dataset(trs)) >= L3
