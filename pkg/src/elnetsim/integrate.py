"""Fixed-step RK4 integration with an adaptive RK45 reference, and order estimation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp

METHODS = ("rk4_fixed", "rk45_reference")


class SimulationDiverged(RuntimeError):
    """The state left the finite range; ``trace`` holds everything recorded before."""

    def __init__(self, last_time, trace):
        self.last_time = last_time
        self.trace = trace
        super().__init__(f"non-finite state after t={last_time:.6g}")


@dataclass(frozen=True)
class IntegratorConfig:
    method: str = "rk4_fixed"
    step: float = 1e-3
    horizon: float = 5.0
    record_stride: int = 1
    rtol: float = 1e-12
    atol: float = 1e-14

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {METHODS}")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if not self.step > 0:
            raise ValueError("step must be positive")
        if self.step > self.horizon:
            raise ValueError(f"step {self.step} is larger than the horizon {self.horizon}")
        if self.record_stride < 1:
            raise ValueError("record_stride must be a positive integer")
        if not (self.rtol > 0 and self.atol > 0):
            raise ValueError("tolerances must be positive")

    @property
    def num_steps(self) -> int:
        return max(1, int(np.ceil(self.horizon / self.step - 1e-9)))


@dataclass
class SimTrace:
    """Recorded samples: ``states`` has one row per entry of ``times``.

    ``controls`` holds the applied torques (when an observer was given) and
    ``storage`` is filled in by certification.
    """

    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray | None = None
    storage: np.ndarray | None = None
    layout: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.states.shape[0] != self.times.shape[0]:
            raise ValueError("states and times disagree in length")
        if self.times.size > 1 and not np.all(np.diff(self.times) > 0):
            raise ValueError("trace times must be strictly increasing")

    def __len__(self):
        return self.times.size

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]


def rk4_step(rhs, t, x, h):
    k1 = rhs(t, x)
    k2 = rhs(t + 0.5 * h, x + 0.5 * h * k1)
    k3 = rhs(t + 0.5 * h, x + 0.5 * h * k2)
    k4 = rhs(t + h, x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _record_times(cfg, t0):
    n = cfg.num_steps
    idx = np.arange(0, n + 1, cfg.record_stride)
    if idx[-1] != n:
        idx = np.append(idx, n)
    times = t0 + idx * cfg.step
    times[-1] = t0 + cfg.horizon
    return idx, times


def simulate(rhs: Callable, x0, cfg: IntegratorConfig, t0: float = 0.0,
             observe: Callable | None = None, layout=None, metadata=None) -> SimTrace:
    """Integrate dx/dt = rhs(t, x) from x0 over ``cfg.horizon`` seconds.

    ``observe(t, x)`` is evaluated at every recorded sample (typically the
    control torque). With ``rk4_fixed`` the result is bit-for-bit
    reproducible; ``rk45_reference`` is scipy's adaptive Dormand-Prince
    pair, sampled on the same grid through its dense output.
    """
    x = np.array(x0, dtype=float).reshape(-1)
    if not np.all(np.isfinite(x)):
        raise ValueError("initial state has non-finite entries")
    idx, times = _record_times(cfg, t0)
    meta = {"integrator": {"method": cfg.method, "step": cfg.step, "horizon": cfg.horizon,
                           "record_stride": cfg.record_stride}}
    meta.update(metadata or {})

    def finish(states, count):
        controls = None
        if observe is not None:
            controls = np.array([observe(t, s) for t, s in zip(times[:count], states[:count])])
        return SimTrace(times[:count].copy(), states[:count], controls, None,
                        dict(layout or {}), meta)

    states = np.empty((times.size, x.size))
    if cfg.method == "rk45_reference":
        sol = solve_ivp(rhs, (t0, t0 + cfg.horizon), x, method="RK45", t_eval=times,
                        rtol=cfg.rtol, atol=cfg.atol)
        ok = sol.y.shape[1]
        states[:ok] = sol.y.T
        if not sol.success or ok < times.size or not np.all(np.isfinite(states)):
            good = int(np.argmin(np.all(np.isfinite(states[:ok]), axis=1))) if ok else 0
            good = good or ok
            raise SimulationDiverged(float(times[max(good - 1, 0)]), finish(states, max(good, 1)))
        return finish(states, times.size)

    n = cfg.num_steps
    h = cfg.step
    last = t0 + cfg.horizon
    states[0] = x
    rec = 1
    # overflow on the way to a blow-up is reported below, not as a warning
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n):
            t = t0 + k * h
            step = min(h, last - t) if k == n - 1 else h
            x = rk4_step(rhs, t, x, step)
            if not np.isfinite(x).all():
                raise SimulationDiverged(t, finish(states, rec))
            if rec < idx.size and idx[rec] == k + 1:
                states[rec] = x
                rec += 1
    return finish(states, times.size)


def convergence_order(rhs, x0, horizon, step=None, t0=0.0, rtol=1e-12, atol=1e-14) -> float:
    """Observed order of the fixed-step RK4 scheme on dx/dt = rhs(t, x).

    Terminal errors at steps h, h/2 and h/4 are measured against the RK45
    reference; the order is log2 of successive error ratios, averaged.
    Returns ``inf`` when every error is at round-off level (the scheme is
    exact, as for dx/dt = 0).
    """
    step = horizon / 40 if step is None else step
    ref = simulate(rhs, x0, IntegratorConfig("rk45_reference", step, horizon, 10**9, rtol, atol), t0)
    x_ref = ref.final_state
    errors = []
    for h in (step, step / 2, step / 4):
        x_h = simulate(rhs, x0, IntegratorConfig("rk4_fixed", h, horizon, 10**9), t0).final_state
        errors.append(float(np.max(np.abs(x_h - x_ref))))
    floor = 1e3 * np.finfo(float).eps * max(1.0, float(np.max(np.abs(x_ref))))
    if max(errors) <= floor:
        return float("inf")
    if min(errors) <= floor:
        raise ValueError(
            f"errors {errors} reach the reference accuracy; use a larger step than {step}"
        )
    p1 = np.log2(errors[0] / errors[1])
    p2 = np.log2(errors[1] / errors[2])
    if abs(p1 - p2) > 0.5:
        raise ValueError(f"order estimate unstable ({p1:.3f} vs {p2:.3f}); dynamics may be non-smooth")
    return float(0.5 * (p1 + p2))
