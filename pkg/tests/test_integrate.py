import dataclasses

import numpy as np
import pytest

from elnetsim.dynamics import NetworkState, agent_rhs, total_coenergy
from elnetsim.integrate import IntegratorConfig, SimTrace, SimulationDiverged, convergence_order, simulate
from elnetsim.models import make_pendulum
from elnetsim.scenario import build_loop, initial_state, load_scenario


def pendulum_rhs(model=None):
    model = model or make_pendulum()

    def rhs(t, x):
        return np.concatenate(agent_rhs(model, x[:1], x[1:], [0.0]))
    return rhs


def test_constant_trace():
    trace = simulate(lambda t, x: np.zeros_like(x), [1.0, -2.0], IntegratorConfig(step=0.1, horizon=1.0))
    assert np.all(trace.states == [1.0, -2.0])
    assert len(trace) == 11 and trace.times[-1] == 1.0


def test_exponential_decay():
    trace = simulate(lambda t, x: -x, [1.0], IntegratorConfig(step=1e-3, horizon=1.0))
    assert abs(trace.final_state[0] - np.exp(-1.0)) < 1e-10


def test_pendulum_energy_rk4():
    model = make_pendulum()
    trace = simulate(pendulum_rhs(model), [1.2, 0.0], IntegratorConfig(step=1e-4, horizon=10.0, record_stride=100))
    H = np.array([total_coenergy([model], NetworkState(x[:1], x[1:])) for x in trace.states])
    assert np.max(np.abs(H - H[0])) < 1e-6 * H[0]


def test_record_stride_and_times():
    cfg = IntegratorConfig(step=0.1, horizon=1.05, record_stride=3)
    trace = simulate(lambda t, x: np.ones_like(x), [0.0], cfg)
    assert cfg.num_steps == 11
    assert np.allclose(trace.times, [0, 0.3, 0.6, 0.9, 1.05])
    assert np.isclose(trace.final_state[0], 1.05, rtol=0, atol=1e-14)


def test_config_validation():
    with pytest.raises(ValueError, match="larger than the horizon"):
        IntegratorConfig(step=2.0, horizon=1.0)
    with pytest.raises(ValueError):
        IntegratorConfig(step=0.0)
    with pytest.raises(ValueError):
        IntegratorConfig(horizon=-1.0)
    with pytest.raises(ValueError):
        IntegratorConfig(method="euler")
    with pytest.raises(ValueError):
        IntegratorConfig(rtol=0.0)


def test_nonfinite_initial_state():
    with pytest.raises(ValueError):
        simulate(lambda t, x: x, [np.inf], IntegratorConfig())


@pytest.mark.parametrize("method", ["rk4_fixed", "rk45_reference"])
def test_blow_up_keeps_partial_trace(method):
    cfg = IntegratorConfig(method=method, step=1e-2, horizon=2.0)
    with pytest.raises(SimulationDiverged) as info:
        simulate(lambda t, x: x**2, [1.0], cfg)
    err = info.value
    assert 0.5 < err.last_time < 1.5
    assert len(err.trace) >= 1
    assert np.all(np.isfinite(err.trace.states))


def test_trace_validation():
    with pytest.raises(ValueError):
        SimTrace(np.array([0.0, 0.0]), np.zeros((2, 1)))
    with pytest.raises(ValueError):
        SimTrace(np.array([0.0, 1.0]), np.zeros((3, 1)))


def test_observer_recorded():
    trace = simulate(lambda t, x: -x, [2.0], IntegratorConfig(step=0.1, horizon=0.5), observe=lambda t, x: 3 * x)
    assert np.array_equal(trace.controls, 3 * trace.states)


def test_rk4_deterministic(table1):
    loop = build_loop(table1)
    x0 = initial_state(table1, loop)
    a = simulate(loop.rhs, x0, table1.integrator, observe=loop.control)
    b = simulate(loop.rhs, x0, table1.integrator, observe=loop.control)
    assert a.states.tobytes() == b.states.tobytes()
    assert a.controls.tobytes() == b.controls.tobytes()


def test_rk45_matches_rk4_on_shipped(scenario_paths):
    for name, path in scenario_paths.items():
        scenario = load_scenario(path, env={})
        loop = build_loop(scenario)
        x0 = initial_state(scenario, loop)
        fixed = simulate(loop.rhs, x0, scenario.integrator).final_state
        cfg = dataclasses.replace(scenario.integrator, method="rk45_reference", record_stride=10**9)
        ref = simulate(loop.rhs, x0, cfg).final_state
        rel = np.max(np.abs(fixed - ref)) / np.max(np.abs(ref))
        assert rel < 1e-7, name


def test_order_linear():
    A = np.array([[0.0, 1.0], [-4.0, -0.3]])
    p = convergence_order(lambda t, x: A @ x, [1.0, 0.0], 2.0, step=0.1)
    assert abs(p - 4.0) <= 0.3


def test_order_pendulum():
    p = convergence_order(pendulum_rhs(), [1.0, 0.5], 2.0, step=0.05)
    assert abs(p - 4.0) <= 0.3


def test_order_exact_for_constant():
    assert convergence_order(lambda t, x: np.zeros_like(x), [1.0], 1.0) == float("inf")


def test_order_detects_nonsmooth():
    # sign switching makes the error sequence erratic
    with pytest.raises(ValueError):
        convergence_order(lambda t, x: -np.sign(x - 0.3) * np.abs(x - 0.3) ** 0.5 - np.sign(np.sin(40 * t)),
                          [1.0], 1.0, step=0.05)
