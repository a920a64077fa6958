"""Euler-Lagrange agents, their stacked network dynamics and energy functions.

Model evaluators are vectorized: they take positions (and velocities) of
shape ``(..., n)`` and return arrays with the same leading shape, so a whole
group of identical agents is evaluated in one call.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

COND_LIMIT = 1e12


class SingularMassError(ValueError):
    """Mass matrix too badly conditioned to invert reliably."""

    def __init__(self, agent, cond):
        self.agent = agent
        self.cond = cond
        super().__init__(
            f"mass matrix of agent {agent} is numerically singular "
            f"(condition number {cond:.3g} > {COND_LIMIT:.0e})"
        )


@dataclass(frozen=True, eq=False)
class AgentModel:
    """Euler-Lagrange agent  M(q) dv/dt + C(q, v) v + g(q) = tau.

    ``coriolis_matrix`` must be the Christoffel-symbol parametrization, so
    that dM/dt - 2C is skew-symmetric. ``mass_eig_bounds`` bracket the
    spectrum of M(q) over the working range.
    """

    name: str
    dof: int
    mass_matrix: Callable[[np.ndarray], np.ndarray]
    coriolis_matrix: Callable[[np.ndarray, np.ndarray], np.ndarray]
    gravity_vector: Callable[[np.ndarray], np.ndarray]
    potential: Callable[[np.ndarray], np.ndarray]
    mass_eig_bounds: tuple[float, float]
    params: dict | None = None

    def __post_init__(self):
        lo, hi = self.mass_eig_bounds
        if not 0 < lo <= hi:
            raise ValueError(f"invalid mass eigenvalue bounds {self.mass_eig_bounds}")


@dataclass
class NetworkState:
    """Stacked positions and velocities of N agents, each of dimension n."""

    q: np.ndarray
    v: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        if self.q.shape != self.v.shape or self.q.ndim != 1:
            raise ValueError(f"q and v must be equal-length vectors, got {self.q.shape}, {self.v.shape}")
        if not (np.all(np.isfinite(self.q)) and np.all(np.isfinite(self.v))):
            raise ValueError("state has non-finite entries")


@dataclass
class VirtualState:
    r: np.ndarray
    s: np.ndarray


class NetworkPlant:
    """Block-diagonal assembly of a list of agent models.

    Agents sharing the same model object are evaluated together. Arrays are
    returned per agent: mass and Coriolis as ``(N, n, n)``, vectors as
    ``(N, n)``.
    """

    def __init__(self, models: Sequence[AgentModel]):
        models = list(models)
        if not models:
            raise ValueError("need at least one agent model")
        n = models[0].dof
        if any(m.dof != n for m in models):
            raise ValueError("all agents must share the configuration dimension")
        self.models = models
        self.N = len(models)
        self.n = n
        groups: dict[int, list[int]] = {}
        for i, m in enumerate(models):
            groups.setdefault(id(m), []).append(i)
        self._groups = [(models[idx[0]], np.array(idx)) for idx in groups.values()]
        if len(self._groups) == 1:
            # one vectorized call covers every agent
            model = models[0]
            self.mass = model.mass_matrix
            self.coriolis = model.coriolis_matrix
            self.gravity = model.gravity_vector
            self.potential = model.potential

    def _per_agent(self, attr, shape, *args):
        out = np.empty((self.N,) + shape)
        for model, idx in self._groups:
            out[idx] = getattr(model, attr)(*(a[idx] for a in args))
        return out

    def mass(self, q):
        """M_i(q_i) for every agent, from positions of shape (N, n)."""
        return self._per_agent("mass_matrix", (self.n, self.n), q)

    def coriolis(self, q, v):
        return self._per_agent("coriolis_matrix", (self.n, self.n), q, v)

    def gravity(self, q):
        return self._per_agent("gravity_vector", (self.n,), q)

    def potential(self, q):
        return self._per_agent("potential", (), q)

    @property
    def mass_bounds(self) -> tuple[float, float]:
        return (
            min(m.mass_eig_bounds[0] for m in self.models),
            max(m.mass_eig_bounds[1] for m in self.models),
        )

    def solve_mass(self, M, rhs):
        """M^{-1} rhs blockwise, guarding against ill-conditioned blocks."""
        if self.n == 1:
            m = M[:, 0, 0]
            if not (m > 0).all():
                i = int(np.argmin(m > 0))
                raise SingularMassError(i + 1, np.inf)
            return rhs / m[:, None]
        eig = np.linalg.eigvalsh(M)
        lo, hi = eig[:, 0], eig[:, -1]
        with np.errstate(divide="ignore", invalid="ignore"):
            cond = np.where(lo > 0, hi / lo, np.inf)
        bad = ~(cond <= COND_LIMIT)
        if bad.any():
            i = int(np.argmax(bad))
            raise SingularMassError(i + 1, float(cond[i]))
        return np.linalg.solve(M, rhs[..., None])[..., 0]


def as_plant(models) -> NetworkPlant:
    if isinstance(models, NetworkPlant):
        return models
    if isinstance(models, AgentModel):
        return NetworkPlant([models])
    return NetworkPlant(models)


def matvec(A, x):
    """Blockwise A_i x_i for A of shape (N, n, n) and x of shape (N, n)."""
    if A.shape[-1] == 1:
        return A[:, :, 0] * x
    return np.matmul(A, x[..., None])[..., 0]


def agent_rhs(model: AgentModel, q_i, v_i, tau_i, agent: int = 1):
    """(dq/dt, dv/dt) of a single agent."""
    q_i = np.asarray(q_i, dtype=float)
    v_i = np.asarray(v_i, dtype=float)
    M = model.mass_matrix(q_i)
    f = np.asarray(tau_i, dtype=float) - model.coriolis_matrix(q_i, v_i) @ v_i - model.gravity_vector(q_i)
    return v_i.copy(), _solve_spd(M, f, agent)


def _solve_spd(M, f, agent):
    M = np.atleast_2d(M)
    if M.shape == (1, 1):
        m = M[0, 0]
        if not m > 0:
            raise SingularMassError(agent, np.inf)
        return f / m
    eig = np.linalg.eigvalsh(M)
    cond = eig[-1] / eig[0] if eig[0] > 0 else np.inf
    if not cond <= COND_LIMIT:
        raise SingularMassError(agent, cond)
    L = np.linalg.cholesky(M)
    return np.linalg.solve(L.T, np.linalg.solve(L, f))


def network_rhs(models, state: NetworkState, tau):
    """(dq/dt, dv/dt) of the stacked network M(q) dv/dt + C(q,v) v + g(q) = tau."""
    plant = as_plant(models)
    N, n = plant.N, plant.n
    q = state.q.reshape(N, n)
    v = state.v.reshape(N, n)
    tau = np.asarray(tau, dtype=float).reshape(N, n)
    f = tau - matvec(plant.coriolis(q, v), v) - plant.gravity(q)
    vdot = plant.solve_mass(plant.mass(q), f)
    return state.v.copy(), vdot.reshape(-1)


def mass_rate(model: AgentModel, q_i, v_i, h: float = 1e-6):
    """dM/dt along velocity v_i by central differences, Richardson-extrapolated once."""
    q_i = np.asarray(q_i, dtype=float)
    v_i = np.asarray(v_i, dtype=float)

    def central(step):
        return (model.mass_matrix(q_i + step * v_i) - model.mass_matrix(q_i - step * v_i)) / (2 * step)

    return (4 * central(h / 2) - central(h)) / 3


def skew_defect(model: AgentModel, q_i, v_i, w) -> float:
    """w^T (dM/dt - 2C(q, v)) w, which vanishes for a Christoffel-parametrized C."""
    w = np.asarray(w, dtype=float)
    Nmat = mass_rate(model, q_i, v_i) - 2 * model.coriolis_matrix(np.asarray(q_i, float), np.asarray(v_i, float))
    return float(w @ Nmat @ w)


def total_coenergy(models, state: NetworkState) -> float:
    """H*(q, v) = 1/2 v^T M(q) v + sum_i P_i(q_i)."""
    plant = as_plant(models)
    q = state.q.reshape(plant.N, plant.n)
    v = state.v.reshape(plant.N, plant.n)
    kinetic = 0.5 * np.einsum("ni,nij,nj->", v, plant.mass(q), v)
    return float(kinetic + np.sum(plant.potential(q)))


def virtual_rhs(model: AgentModel, q_i, v_i, vstate: VirtualState, u_bar_i, agent: int = 1):
    """Virtual system in (r, s) driven by u_bar, parametrized by the actual (q, v)."""
    q_i = np.asarray(q_i, dtype=float)
    s = np.asarray(vstate.s, dtype=float)
    f = (
        np.asarray(u_bar_i, dtype=float)
        - model.coriolis_matrix(q_i, np.asarray(v_i, dtype=float)) @ s
        - model.gravity_vector(np.asarray(vstate.r, dtype=float))
    )
    return s.copy(), _solve_spd(model.mass_matrix(q_i), f, agent)


def virtual_storage(model: AgentModel, q_i, vstate: VirtualState) -> float:
    """1/2 s^T M(q) s + P(r); its rate along virtual_rhs equals s^T u_bar."""
    s = np.asarray(vstate.s, dtype=float)
    return float(0.5 * s @ model.mass_matrix(np.asarray(q_i, float)) @ s + model.potential(np.asarray(vstate.r, float)))
