"""Scenario files: loading and validation, running, CSV traces, reports and plots."""

from __future__ import annotations

import copy
import hashlib
import io
import json
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import analysis
from .controllers import (
    PROTOCOLS,
    ClosedLoop,
    GainConfig,
    constant_reference,
    damping_input,
    make_loop,
    polynomial_reference,
    sinusoid_reference,
)
from .graph import NetworkGraph
from .integrate import IntegratorConfig, SimTrace, SimulationDiverged, simulate
from .models import CATALOG, make_model

SEED_ENV = "ELNETSIM_SEED"

_number = {"type": "number"}
_vector = {"type": "array", "items": _number}
_gain = {"anyOf": [_number, {"type": "array"}]}
_model = {
    "type": "object",
    "properties": {
        "model": {"enum": sorted(CATALOG)},
        "params": {"type": "object", "additionalProperties": _number},
    },
    "required": ["model"],
    "additionalProperties": False,
}

SCHEMA = {
    "type": "object",
    "properties": {
        "name": {"type": "string"},
        "description": {"type": "string"},
        "graph": {
            "type": "object",
            "properties": {
                "num_vertices": {"type": "integer", "minimum": 1},
                "agent_dim": {"type": "integer", "minimum": 1},
                "edges": {
                    "type": "array",
                    "items": {"type": "array", "items": {"type": "integer"},
                              "minItems": 2, "maxItems": 2},
                },
                "directed": {"type": "boolean"},
            },
            "required": ["num_vertices", "agent_dim", "edges"],
            "additionalProperties": False,
        },
        "model": _model,
        "models": {"type": "array", "items": _model, "minItems": 1},
        "controller": {
            "type": "object",
            "properties": {
                "protocol": {"enum": list(PROTOCOLS)},
                "gains": {
                    "type": "object",
                    "properties": {"Pi": _gain, "K": _gain, "Delta": _gain, "K_zeta": _gain},
                    "required": ["Pi", "K"],
                    "additionalProperties": False,
                },
                "zeta_d": {"anyOf": [_number, _vector]},
                "zeta0": _vector,
                "damping": {"type": "number", "exclusiveMinimum": 0},
            },
            "required": ["protocol", "gains"],
            "additionalProperties": False,
        },
        "reference": {
            "oneOf": [
                {"type": "object",
                 "properties": {"type": {"const": "constant"},
                                "value": {"anyOf": [_number, _vector]}},
                 "required": ["type", "value"], "additionalProperties": False},
                {"type": "object",
                 "properties": {"type": {"const": "sinusoid"},
                                "amplitude": {"anyOf": [_number, _vector]},
                                "frequency": {"anyOf": [_number, _vector]},
                                "phase": {"anyOf": [_number, _vector]},
                                "offset": {"anyOf": [_number, _vector]}},
                 "required": ["type", "amplitude", "frequency"], "additionalProperties": False},
                {"type": "object",
                 "properties": {"type": {"const": "polynomial"},
                                "coefficients": {"type": "array", "items": _vector}},
                 "required": ["type", "coefficients"], "additionalProperties": False},
            ]
        },
        "initial": {
            "oneOf": [
                {"type": "object",
                 "properties": {"q": _vector, "v": _vector},
                 "required": ["q", "v"], "additionalProperties": False},
                {"type": "object",
                 "properties": {"seed": {"type": "integer"},
                                "q_spread": {"type": "number", "minimum": 0},
                                "v_spread": {"type": "number", "minimum": 0}},
                 "required": ["seed"], "additionalProperties": False},
            ]
        },
        "integrator": {
            "type": "object",
            "properties": {
                "method": {"enum": ["rk4_fixed", "rk45_reference"]},
                "step": {"type": "number", "exclusiveMinimum": 0},
                "horizon": {"type": "number", "exclusiveMinimum": 0},
                "record_stride": {"type": "integer", "minimum": 1},
                "rtol": {"type": "number", "exclusiveMinimum": 0},
                "atol": {"type": "number", "exclusiveMinimum": 0},
            },
            "additionalProperties": False,
        },
        "certification": {
            "type": "object",
            "properties": {"tolerance": {"type": "number", "exclusiveMinimum": 0, "maximum": 1}},
            "additionalProperties": False,
        },
        "output": {
            "type": "object",
            "properties": {"csv": {"type": "string"}, "report": {"type": "string"},
                           "plot": {"type": "string"}},
            "additionalProperties": False,
        },
    },
    "required": ["graph", "controller", "reference", "initial"],
    "oneOf": [{"required": ["model"]}, {"required": ["models"]}],
    "additionalProperties": False,
}


class ScenarioError(ValueError):
    """Invalid scenario; ``pointer`` is the JSON pointer of the offending entry."""

    def __init__(self, message, pointer=""):
        self.pointer = pointer
        super().__init__(f"{pointer or '/'}: {message}")


@dataclass
class Scenario:
    name: str
    graph: NetworkGraph
    models: list
    protocol: str
    gains: GainConfig
    reference: object
    initial: dict
    integrator: IntegratorConfig
    tolerance: float = 0.05
    zeta0: np.ndarray | None = None
    damping: float | None = None
    output: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)

    @property
    def digest(self) -> str:
        """sha256 of the canonical JSON form of the scenario."""
        text = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


def _pointer(path) -> str:
    return "".join(f"/{p}" for p in path)


def _validate_schema(data):
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(data), key=lambda e: (len(e.absolute_path), list(map(str, e.absolute_path))))
    if errors:
        err = errors[0]
        # oneOf failures hide the useful message one level down
        best = jsonschema.exceptions.best_match(errors)
        if best is not None:
            err = best
        raise ScenarioError(err.message, _pointer(err.absolute_path))


def _coords(value, dim, key):
    a = np.atleast_1d(np.asarray(value, float))
    if a.size not in (1, dim):
        raise ScenarioError(f"{key} has {a.size} entries, agents have dimension {dim}", "/reference")
    return np.broadcast_to(a, (dim,))


def _reference(spec, dim):
    kind = spec["type"]
    if kind == "constant":
        ref = constant_reference(_coords(spec["value"], dim, "value"))
    elif kind == "sinusoid":
        args = [_coords(spec.get(k, d), dim, k)
                for k, d in (("amplitude", 0.0), ("frequency", 0.0), ("phase", 0.0), ("offset", 0.0))]
        ref = sinusoid_reference(*args)
    else:
        ref = polynomial_reference(spec["coefficients"])
    if ref.dim != dim:
        raise ScenarioError(f"reference has dimension {ref.dim}, agents have {dim}", "/reference")
    return ref


def parse_scenario(data: dict, env=None) -> Scenario:
    """Validate a scenario dictionary and build its objects."""
    env = os.environ if env is None else env
    _validate_schema(data)
    data = copy.deepcopy(data)
    g = data["graph"]
    N, n = g["num_vertices"], g["agent_dim"]
    try:
        graph = NetworkGraph(N, tuple(tuple(e) for e in g["edges"]), n, g.get("directed", False))
    except ValueError as exc:
        raise ScenarioError(str(exc), "/graph/edges") from None
    M = graph.num_edges

    if "model" in data:
        try:
            shared = make_model(data["model"]["model"], data["model"].get("params"))
        except (TypeError, ValueError) as exc:
            raise ScenarioError(str(exc), "/model") from None
        models = [shared] * N
    else:
        if len(data["models"]) != N:
            raise ScenarioError(f"expected {N} models, got {len(data['models'])}", "/models")
        models = []
        for i, spec in enumerate(data["models"]):
            try:
                models.append(make_model(spec["model"], spec.get("params")))
            except (TypeError, ValueError) as exc:
                raise ScenarioError(str(exc), f"/models/{i}") from None
    for i, m in enumerate(models):
        if m.dof != n:
            raise ScenarioError(f"model {m.name} has {m.dof} degrees of freedom, graph says {n}",
                                "/models" if "models" in data else "/model")

    ctrl = data["controller"]
    gains_spec = ctrl["gains"]
    try:
        gains = GainConfig.build(
            N, n, M,
            Pi=gains_spec["Pi"], K=gains_spec["K"],
            Delta=gains_spec.get("Delta", 1.0), K_zeta=gains_spec.get("K_zeta", 1.0),
            zeta_d=ctrl.get("zeta_d", 0.0),
        )
    except ValueError as exc:
        raise ScenarioError(str(exc), "/controller/gains") from None
    zeta0 = None
    if "zeta0" in ctrl:
        zeta0 = np.asarray(ctrl["zeta0"], float)
        if zeta0.size != M * n:
            raise ScenarioError(f"zeta0 needs {M * n} entries, got {zeta0.size}", "/controller/zeta0")

    reference = _reference(data["reference"], n)

    initial = dict(data["initial"])
    if "q" in initial:
        for key in ("q", "v"):
            if len(initial[key]) != N * n:
                raise ScenarioError(f"needs {N * n} entries, got {len(initial[key])}", f"/initial/{key}")
    elif SEED_ENV in env:
        try:
            initial["seed"] = int(env[SEED_ENV])
        except ValueError:
            raise ScenarioError(f"{SEED_ENV}={env[SEED_ENV]!r} is not an integer", "/initial/seed") from None

    try:
        integrator = IntegratorConfig(**data.get("integrator", {}))
    except ValueError as exc:
        raise ScenarioError(str(exc), "/integrator") from None

    return Scenario(
        name=data.get("name", "scenario"),
        graph=graph,
        models=models,
        protocol=ctrl["protocol"],
        gains=gains,
        reference=reference,
        initial=initial,
        integrator=integrator,
        tolerance=data.get("certification", {}).get("tolerance", 0.05),
        zeta0=zeta0,
        damping=ctrl.get("damping"),
        output=data.get("output", {}),
        raw=data,
    )


def load_scenario(path, env=None) -> Scenario:
    """Read and validate a scenario JSON file (unknown keys are rejected)."""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"invalid JSON: {exc}") from None
    scenario = parse_scenario(data, env)
    if not scenario.raw.get("name"):
        scenario.name = path.stem
    return scenario


def shipped_scenarios() -> dict[str, Path]:
    """Scenario files bundled with the package, by name."""
    folder = resources.files("elnetsim") / "scenarios"
    return {Path(p.name).stem: Path(str(p)) for p in folder.iterdir() if p.name.endswith(".json")}


def build_loop(scenario: Scenario) -> ClosedLoop:
    kwargs = {}
    if scenario.damping is not None:
        kwargs["external_input"] = damping_input(scenario.damping)
    return make_loop(scenario.protocol, scenario.models, scenario.graph, scenario.gains,
                     scenario.reference, **kwargs)


def initial_conditions(scenario: Scenario):
    """(q0, v0) from explicit values or the seeded distribution.

    Seeded draws are q0 = 1 (x) q_d(0) + U(-q_spread, q_spread) and
    v0 = 1 (x) dq_d/dt(0) + U(-v_spread, v_spread), with numpy's default
    generator; q_spread defaults to 1 and v_spread to 0.
    """
    init = scenario.initial
    if "q" in init:
        return np.asarray(init["q"], float), np.asarray(init["v"], float)
    N = scenario.graph.num_vertices
    qd, dqd, _ = scenario.reference.at(0.0)
    rng = np.random.default_rng(init["seed"])
    size = N * scenario.graph.agent_dim
    q0 = np.tile(qd, N) + rng.uniform(-1, 1, size) * init.get("q_spread", 1.0)
    v0 = np.tile(dqd, N) + rng.uniform(-1, 1, size) * init.get("v_spread", 0.0)
    return q0, v0


def initial_state(scenario: Scenario, loop: ClosedLoop) -> np.ndarray:
    q0, v0 = initial_conditions(scenario)
    return loop.initial_state(q0, v0, scenario.zeta0)


def _layout(loop):
    return {"N": loop.N, "n": loop.n, "M": loop.M_edges if loop.has_edges else 0}


def run_scenario(scenario: Scenario, out_dir=None):
    """Simulate, certify and (with ``out_dir``) write CSV, JSON report and SVG plot.

    On divergence the partial trace is written before the error propagates.
    """
    loop = build_loop(scenario)
    x0 = initial_state(scenario, loop)
    meta = {"scenario": scenario.name, "scenario_sha256": scenario.digest, "protocol": scenario.protocol}
    try:
        trace = simulate(loop.rhs, x0, scenario.integrator, observe=loop.control,
                         layout=_layout(loop), metadata=meta)
    except SimulationDiverged as exc:
        if out_dir is not None:
            partial = exc.trace
            partial.storage = np.array([analysis.loop_storage(loop, t, x)
                                        for t, x in zip(partial.times, partial.states)])
            emit_csv(partial, _out_path(scenario, out_dir, "csv"))
        raise
    report = analysis.certify_trace(trace, loop, tol=scenario.tolerance)
    trace.storage = report.storage
    if out_dir is not None:
        emit_csv(trace, _out_path(scenario, out_dir, "csv"))
        write_report(report, _out_path(scenario, out_dir, "report"), meta)
        emit_plot(trace, _out_path(scenario, out_dir, "plot"))
    return trace, report


_DEFAULT_NAMES = {"csv": "{name}.csv", "report": "{name}.report.json", "plot": "{name}.svg"}


def _out_path(scenario, out_dir, kind):
    name = scenario.output.get(kind) or _DEFAULT_NAMES[kind].format(name=scenario.name)
    path = Path(out_dir) / name
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def write_report(report, path, metadata=None):
    data = report.to_dict()
    data["metadata"] = metadata or {}
    Path(path).write_text(json.dumps(data, indent=2) + "\n")


# --------------------------------------------------------------------------
# CSV traces


def csv_header(layout) -> list[str]:
    Nn = layout["N"] * layout["n"]
    Mn = layout.get("M", 0) * layout["n"]
    cols = ["t"]
    cols += [f"q_{i}" for i in range(1, Nn + 1)]
    cols += [f"v_{i}" for i in range(1, Nn + 1)]
    cols += [f"zeta_{i}" for i in range(1, Mn + 1)]
    cols += [f"tau_{i}" for i in range(1, Nn + 1)]
    cols.append("S")
    return cols


def emit_csv(trace: SimTrace, path) -> None:
    """Write ``t, q.., v.., [zeta..], tau.., S`` rows with 17 significant digits."""
    if trace.controls is None or trace.storage is None:
        raise ValueError("trace needs recorded controls and storage values to be written")
    if not trace.layout:
        raise ValueError("trace has no state layout")
    table = np.column_stack([trace.times, trace.states, trace.controls, trace.storage])
    header = csv_header(trace.layout)
    if table.shape[1] != len(header):
        raise ValueError(f"trace has {table.shape[1]} columns, layout implies {len(header)}")
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in table:
        buf.write(",".join(f"{value:.17g}" for value in row) + "\n")
    with open(path, "w", newline="\n") as fh:
        fh.write(buf.getvalue())


def read_csv(path, layout=None) -> SimTrace:
    """Parse a trace written by :func:`emit_csv`.

    The header fixes only the stacked sizes, so without ``layout`` the agents
    are taken to be scalar (N = Nn, n = 1), which writes back the same header.
    """
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    if not header or header[0] != "t" or header[-1] != "S":
        raise ValueError(f"{path} is not a trace file")
    Nn = sum(1 for c in header if c.startswith("q_"))
    Mn = sum(1 for c in header if c.startswith("zeta_"))
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    states = data[:, 1:1 + 2 * Nn + Mn]
    controls = data[:, 1 + 2 * Nn + Mn:1 + 3 * Nn + Mn]
    layout = dict(layout) if layout else {"N": Nn, "n": 1, "M": Mn}
    if layout["N"] * layout["n"] != Nn or layout.get("M", 0) * layout["n"] != Mn:
        raise ValueError(f"layout {layout} does not match the header of {path}")
    return SimTrace(data[:, 0], states, controls, data[:, -1], layout)


# --------------------------------------------------------------------------
# plots


def emit_plot(trace: SimTrace, path) -> None:
    """SVG of every position coordinate against time."""
    import matplotlib
    from matplotlib.figure import Figure

    if len(trace) == 0:
        raise ValueError("cannot plot an empty trace")
    N = trace.layout.get("N")
    n = trace.layout.get("n", 1)
    if N is None:
        raise ValueError("trace has no state layout")
    with matplotlib.rc_context({"svg.hashsalt": "elnetsim", "svg.fonttype": "none"}):
        fig = Figure(figsize=(6.0, 3.6))
        ax = fig.add_subplot()
        for i in range(N):
            for j in range(n):
                label = f"$q_{{{i + 1}}}$" if n == 1 else f"$q_{{{i + 1},{j + 1}}}$"
                ax.plot(trace.times, trace.states[:, i * n + j], label=label, linewidth=1.2)
        ax.set_xlabel("time [s]")
        ax.set_ylabel("position")
        ax.grid(True, alpha=0.3)
        ax.legend(loc="best", fontsize="small", ncol=2 if N * n > 4 else 1)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
