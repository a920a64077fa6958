import copy
import hashlib
import json
import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np
import pytest

from elnetsim.integrate import IntegratorConfig, SimTrace, SimulationDiverged, simulate
from elnetsim.scenario import (
    SEED_ENV,
    ScenarioError,
    build_loop,
    csv_header,
    emit_csv,
    emit_plot,
    initial_conditions,
    load_scenario,
    parse_scenario,
    read_csv,
    run_scenario,
)

GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture
def table1_data(table1_path):
    return json.loads(Path(table1_path).read_text())


def _error(data, env=None):
    with pytest.raises(ScenarioError) as info:
        parse_scenario(data, env={} if env is None else env)
    return info.value


# -- loading ----------------------------------------------------------------


def test_table1_loads(table1):
    g = table1.graph
    assert (g.num_vertices, g.agent_dim, g.num_edges) == (6, 1, 6)
    assert table1.reference.at(0.0)[0].tolist() == [0.36]
    assert np.array_equal(table1.gains.Pi, 3.5 * np.eye(6))
    assert np.array_equal(table1.gains.K, 12 * np.eye(6))
    assert np.array_equal(table1.gains.K_zeta, 5 * np.eye(6))
    assert not table1.gains.zeta_d.any()
    assert table1.protocol == "node_edge_spring"
    assert table1.integrator == IntegratorConfig("rk4_fixed", 1e-3, 5.0)


def test_missing_edges_named(table1_data):
    del table1_data["graph"]["edges"]
    err = _error(table1_data)
    assert "edges" in str(err) and err.pointer == "/graph"


def test_edge_out_of_range(table1_data):
    table1_data["graph"]["edges"][0] = [1, 7]
    err = _error(table1_data)
    assert err.pointer == "/graph/edges" and "7" in str(err)


def test_unknown_keys_rejected(table1_data):
    bad = copy.deepcopy(table1_data)
    bad["colour"] = "red"
    assert "colour" in str(_error(bad))
    bad = copy.deepcopy(table1_data)
    bad["controller"]["gains"]["Kp"] = 1.0
    err = _error(bad)
    assert err.pointer == "/controller/gains" and "Kp" in str(err)


def test_bad_values_point_at_field(table1_data):
    bad = copy.deepcopy(table1_data)
    bad["integrator"]["step"] = -1
    assert _error(bad).pointer == "/integrator/step"
    bad = copy.deepcopy(table1_data)
    bad["controller"]["protocol"] = "pid"
    assert _error(bad).pointer == "/controller/protocol"


def test_inconsistent_dimensions(table1_data):
    bad = copy.deepcopy(table1_data)
    bad["initial"]["q"] = [0.0] * 5
    assert _error(bad).pointer == "/initial/q"
    bad = copy.deepcopy(table1_data)
    bad["model"] = {"model": "two_link"}
    assert "degrees of freedom" in str(_error(bad))
    bad = copy.deepcopy(table1_data)
    bad["controller"]["zeta0"] = [0.0] * 4
    assert _error(bad).pointer == "/controller/zeta0"
    bad = copy.deepcopy(table1_data)
    bad["reference"] = {"type": "constant", "value": [0.1, 0.2]}
    assert _error(bad).pointer == "/reference"
    bad = copy.deepcopy(table1_data)
    del bad["model"]
    bad["models"] = [{"model": "double_integrator"}] * 5
    assert _error(bad).pointer == "/models"


def test_model_and_models_exclusive(table1_data):
    table1_data["models"] = [{"model": "double_integrator"}] * 6
    _error(table1_data)


def test_per_agent_models(table1_data):
    del table1_data["model"]
    table1_data["models"] = [{"model": "double_integrator", "params": {"mass": 1.0 + i / 10}} for i in range(6)]
    scenario = parse_scenario(table1_data, env={})
    assert [m.params["mass"] for m in scenario.models] == [1.0, 1.1, 1.2, 1.3, 1.4, 1.5]


def test_bad_json(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    with pytest.raises(ScenarioError, match="invalid JSON"):
        load_scenario(path)


def test_seeded_initial_conditions(table1_data):
    table1_data["initial"] = {"seed": 3, "q_spread": 0.5, "v_spread": 0.2}
    a = initial_conditions(parse_scenario(table1_data, env={}))
    b = initial_conditions(parse_scenario(table1_data, env={}))
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    assert np.all(np.abs(a[0] - 0.36) <= 0.5) and np.all(np.abs(a[1]) <= 0.2)
    other = parse_scenario(table1_data, env={SEED_ENV: "4"})
    assert other.initial["seed"] == 4
    assert not np.array_equal(initial_conditions(other)[0], a[0])
    assert _error(table1_data, env={SEED_ENV: "x"}).pointer == "/initial/seed"


# -- running ----------------------------------------------------------------


def test_table1_reaches_agreement(table1, tmp_path):
    trace, report = run_scenario(table1, tmp_path)
    q = trace.final_state[:6]
    assert np.max(np.abs(q - 0.36)) < 1e-3
    assert np.ptp(q) < 1e-3
    assert report.ok
    assert sorted(p.name for p in tmp_path.iterdir()) == ["table1.csv", "table1.report.json", "table1.svg"]
    saved = json.loads((tmp_path / "table1.report.json").read_text())
    assert saved["ok"] and saved["metadata"]["scenario_sha256"] == table1.digest


def test_zero_error_flat_trace(table1_data):
    table1_data["initial"]["q"] = [0.36] * 6
    trace, report = run_scenario(parse_scenario(table1_data, env={}))
    assert np.all(trace.states[:, :6] == 0.36)
    assert not trace.states[:, 6:].any()
    assert report.ok


def test_sync_backstepping_envelope(scenario_paths):
    scenario = load_scenario(scenario_paths["ring_sync_backstepping"], env={})
    trace, report = run_scenario(scenario)
    assert np.isclose(report.beta, 1.6)
    assert report.envelope_violations == 0 and report.ok
    assert np.max(np.abs(trace.final_state[:6] - 0.36)) < 1e-2


def test_every_shipped_scenario_certifies(scenario_paths):
    assert {"table1", "ring_sync_backstepping", "two_link_tracking"} <= set(scenario_paths)
    for name, path in scenario_paths.items():
        _, report = run_scenario(load_scenario(path, env={}))
        assert report.ok, report.summary()


def test_pipeline_deterministic(table1, tmp_path):
    run_scenario(table1, tmp_path / "a")
    run_scenario(table1, tmp_path / "b")
    for name in ("table1.csv", "table1.report.json", "table1.svg"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_blow_up_persists_partial_trace(table1_data, tmp_path):
    table1_data.update(name="unstable")
    table1_data["controller"] = {"protocol": "single_slotine_li", "gains": {"Pi": 1.0, "K": -400.0}}
    with pytest.raises(SimulationDiverged) as info:
        run_scenario(parse_scenario(table1_data, env={}), tmp_path)
    partial = read_csv(tmp_path / "unstable.csv")
    assert len(partial) == len(info.value.trace)
    assert partial.times[-1] <= info.value.last_time


# -- CSV --------------------------------------------------------------------


def _tiny_trace():
    layout = {"N": 2, "n": 1, "M": 1}
    states = np.array([[0.1, 0.2, 0.0, 0.0, 0.1], [0.1 + 1e-17, 2 / 3, -1e-300, 5e10, np.pi]])
    return SimTrace(np.array([0.0, 1e-3]), states, np.array([[1.0, -1.0], [0.5, 1 / 3]]),
                    np.array([2.5, 1.0 / 7]), layout)


def test_csv_lines_and_header(tmp_path):
    path = tmp_path / "tiny.csv"
    emit_csv(_tiny_trace(), path)
    raw = path.read_bytes()
    assert b"\r" not in raw
    lines = raw.decode().splitlines()
    assert len(lines) == 3
    assert lines[0] == "t,q_1,q_2,v_1,v_2,zeta_1,tau_1,tau_2,S"
    assert csv_header({"N": 3, "n": 2}) == ["t"] + [f"q_{i}" for i in range(1, 7)] + \
        [f"v_{i}" for i in range(1, 7)] + [f"tau_{i}" for i in range(1, 7)] + ["S"]


def test_csv_round_trip(tmp_path):
    trace = _tiny_trace()
    path = tmp_path / "tiny.csv"
    emit_csv(trace, path)
    back = read_csv(path, trace.layout)
    for field in ("times", "states", "controls", "storage"):
        assert np.array_equal(getattr(back, field), getattr(trace, field))
    emit_csv(back, tmp_path / "again.csv")
    assert (tmp_path / "again.csv").read_bytes() == path.read_bytes()


def test_csv_errors(tmp_path):
    trace = _tiny_trace()
    with pytest.raises(OSError):
        emit_csv(trace, tmp_path / "missing" / "x.csv")
    trace.storage = None
    with pytest.raises(ValueError, match="storage"):
        emit_csv(trace, tmp_path / "x.csv")


def _golden_check(path, name):
    digest = hashlib.sha256(path.read_bytes()).hexdigest()
    digest_file = GOLDEN / f"{name}.sha256"
    prefix_file = GOLDEN / f"{name}.head.csv"
    head = "".join(path.read_text().splitlines(keepends=True)[:101])
    if not digest_file.exists():
        # first-run capture
        digest_file.write_text(digest + "\n")
        prefix_file.write_text(head)
        pytest.skip(f"captured golden digest for {name}")
    assert head == prefix_file.read_text()
    assert digest == digest_file.read_text().strip()


def test_table1_golden(table1, tmp_path):
    run_scenario(table1, tmp_path)
    _golden_check(tmp_path / "table1.csv", "table1")


# -- plots ------------------------------------------------------------------


def _curves(svg_path):
    root = ET.parse(svg_path).getroot()
    ns = {"svg": "http://www.w3.org/2000/svg"}
    groups = root.findall(".//svg:g[@id]", ns)
    return [g for g in groups if g.get("id", "").startswith("line2d_")], svg_path.read_text()


def test_plot_table1(table1, tmp_path):
    trace, _ = run_scenario(table1)
    emit_plot(trace, tmp_path / "fig.svg")
    _, text = _curves(tmp_path / "fig.svg")
    for i in range(1, 7):
        assert f"q_{{{i}}}" in text
    assert "q_{7}" not in text


def test_plot_single_agent(tmp_path):
    trace = simulate(lambda t, x: np.array([x[1], -x[0]]), [1.0, 0.0], IntegratorConfig(step=0.01, horizon=1.0))
    trace.layout = {"N": 1, "n": 1, "M": 0}
    emit_plot(trace, tmp_path / "one.svg")
    _, text = _curves(tmp_path / "one.svg")
    assert "q_{1}" in text and "q_{2}" not in text


def test_plot_empty_trace(tmp_path):
    empty = SimTrace(np.zeros(0), np.zeros((0, 2)), layout={"N": 1, "n": 1, "M": 0})
    with pytest.raises(ValueError, match="empty"):
        emit_plot(empty, tmp_path / "x.svg")


def test_plot_unwritable(tmp_path):
    trace = simulate(lambda t, x: -x, [1.0, 0.0], IntegratorConfig(step=0.1, horizon=1.0))
    trace.layout = {"N": 1, "n": 1, "M": 0}
    with pytest.raises(OSError):
        emit_plot(trace, tmp_path / "nope" / "x.svg")
