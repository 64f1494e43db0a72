import math

import numpy as np
import pytest

from diskoop.dynsim import (BENCHMARK, NumericalBlowupError, System,
                            TrajectoryDataset, benchmark_rhs, generate_input,
                            get_system, rk4_step, simulate)


def _linear(a):
    return System('linear', 1, 1, 1, lambda x, u: a * x + u, lambda x: x)


def test_benchmark_equilibrium():
    np.testing.assert_array_equal(benchmark_rhs(np.zeros(2), [0.0]), [0, 0])


def test_benchmark_cos_term():
    np.testing.assert_allclose(benchmark_rhs(np.array([1.0, 0.0]), [0.0]),
                               [0.0, 0.540302], atol=1e-6)


def test_benchmark_input_term():
    np.testing.assert_allclose(benchmark_rhs(np.array([0.0, 1.0]), [1.0]),
                               [1.0, -1.0], atol=1e-15)


def test_benchmark_output_and_shape_check():
    assert BENCHMARK.output(np.array([3.0, -4.0]))[0] == -4.0
    with pytest.raises(ValueError):
        benchmark_rhs(np.zeros(3), [0.0])
    assert get_system('benchmark') is BENCHMARK
    with pytest.raises(ValueError):
        get_system('nope')


def test_rk4_zero_field():
    x = np.array([1.5, -2.0])
    np.testing.assert_array_equal(
        rk4_step(lambda x, u: np.zeros_like(x), x, None, 0.01), x)


@pytest.mark.parametrize('a', [-1.0, 1.0])
def test_rk4_exponential(a):
    x = rk4_step(lambda x, u: a * x, np.array([1.0]), None, 0.01)
    assert abs(x[0] - math.exp(a * 0.01)) < 1e-9


def test_rk4_fourth_order():
    def error(dt):
        steps = int(round(1.0 / dt))
        x = np.array([1.0])
        for _ in range(steps):
            x = rk4_step(lambda x, u: -x, x, None, dt)
        return abs(x[0] - math.exp(-1.0))

    ratio = error(0.1) / error(0.05)
    assert 12 <= ratio <= 20


def test_rk4_rejects_bad_dt_and_blowup():
    with pytest.raises(ValueError):
        rk4_step(lambda x, u: x, np.ones(1), None, 0.0)
    with np.errstate(over='ignore', invalid='ignore'):
        with pytest.raises(NumericalBlowupError):
            rk4_step(lambda x, u: x**2, np.array([1e200]), None, 1.0)


def test_input_zero():
    u = generate_input('zero', 10)
    assert u.shape == (10, 1) and not u.any()


def test_input_uniform_bounds_and_determinism():
    u = generate_input('uniform_random', 5000, seed=3)
    assert u.min() >= -1 and u.max() <= 1
    assert u.min() < -0.99 and u.max() > 0.99
    np.testing.assert_array_equal(u, generate_input('uniform_random', 5000,
                                                    seed=3))
    assert not np.array_equal(u, generate_input('uniform_random', 5000,
                                                seed=4))


def test_input_uniform_custom_bounds():
    u = generate_input('uniform_random', 100, seed=0, low=2.0, high=3.0,
                       n_inputs=2)
    assert u.shape == (100, 2) and u.min() >= 2 and u.max() <= 3


def test_input_sine():
    u = generate_input('sine', 50, dt=0.1, amplitude=2.0, omega=3.0)
    np.testing.assert_allclose(u[:, 0], 2 * np.sin(3 * 0.1 * np.arange(50)))


def test_input_errors():
    with pytest.raises(ValueError):
        generate_input('square', 10)
    with pytest.raises(ValueError):
        generate_input('zero', 0)


def test_simulate_equilibrium():
    ds = simulate(BENCHMARK, np.zeros(2), np.zeros((20, 1)), 0.01)
    assert not ds.states.any() and not ds.outputs.any()


def test_simulate_lengths():
    u = generate_input('uniform_random', 5000, seed=0)
    ds = simulate(BENCHMARK, np.zeros(2), u, 0.01)
    assert ds.states.shape == (5001, 2)
    assert ds.inputs.shape == (5000, 1) and ds.outputs.shape == (5000, 1)
    np.testing.assert_array_equal(ds.outputs[:, 0], ds.states[:-1, 1])
    assert ds.metadata['system'] == 'benchmark'
    assert 'system_notes' in ds.metadata


def test_simulate_linear_oracle():
    ds = simulate(_linear(-1.0), [1.0], np.zeros(100), 0.01)
    expected = np.exp(-0.01 * np.arange(101))
    assert np.max(np.abs(ds.states[:, 0] - expected)) < 1e-6


def test_simulate_deterministic():
    u = generate_input('uniform_random', 300, seed=9)
    a = simulate(BENCHMARK, [0.1, 0.2], u, 0.01)
    b = simulate(BENCHMARK, [0.1, 0.2], u, 0.01)
    np.testing.assert_array_equal(a.states, b.states)


def test_simulate_blowup_reports_step():
    sys_ = System('quad', 1, 1, 1, lambda x, u: x**2, lambda x: x)
    with np.errstate(over='ignore', invalid='ignore'):
        with pytest.raises(NumericalBlowupError) as info:
            simulate(sys_, [1.0], np.zeros(200), 0.1)
    assert info.value.step is not None and 0 < info.value.step < 200


def test_dataset_invariants():
    with pytest.raises(ValueError):
        TrajectoryDataset(0.01, np.zeros((3, 1)), np.zeros((3, 1)),
                          np.zeros((3, 1)))
    with pytest.raises(ValueError):
        TrajectoryDataset(0.0, np.zeros((3, 1)), np.zeros((2, 1)),
                          np.zeros((2, 1)))
    ds = TrajectoryDataset(0.1, np.zeros(3), np.zeros(2), np.zeros(2))
    assert (ds.n_samples, ds.n_states, ds.n_inputs, ds.n_outputs) == \
        (2, 1, 1, 1)
