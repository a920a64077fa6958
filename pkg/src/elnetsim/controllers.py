"""Passivity-based tracking laws for single agents and networks of agents.

Three distributed protocols are provided:

* ``node_edge_spring``: a backstepping tracking law at every node, coupled
  through first-order spring systems living on the edges;
* ``sync_slotine_li``: a network sliding variable with diffusive position
  coupling through B Delta B^T;
* ``sync_backstepping``: the same sliding variable plus position-error
  feedback, which gives a strict Lyapunov function.

Each law is a pure map from the current state and reference to torques. The
``*Loop`` classes wire a law to the plant and expose the flat-state
right-hand side used by :mod:`elnetsim.integrate`.

A reference is passed around evaluated at the current time as the triple
``(q_d, dq_d/dt, d2q_d/dt2)``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .dynamics import NetworkPlant, as_plant, matvec
from .graph import NetworkGraph, check_connectivity, kron_lift

PROTOCOLS = (
    "node_edge_spring",
    "sync_slotine_li",
    "sync_backstepping",
    "single_slotine_li",
    "single_backstepping",
)


# --------------------------------------------------------------------------
# gains and references


def block_gain(value, count: int, dim: int) -> np.ndarray:
    """Expand a gain to a (count*dim) x (count*dim) block-diagonal matrix.

    Accepts a scalar (same value on every diagonal entry), ``count`` scalars
    (one per block), ``count`` blocks of shape (dim, dim), a single (dim, dim)
    block repeated, or the full matrix.
    """
    a = np.asarray(value, dtype=float)
    size = count * dim
    if a.ndim == 0:
        return float(a) * np.eye(size)
    if a.ndim == 1 and a.shape == (count,):
        return np.kron(np.diag(a), np.eye(dim))
    if a.ndim == 2 and a.shape == (dim, dim):
        return np.kron(np.eye(count), a)
    if a.ndim == 3 and a.shape == (count, dim, dim):
        out = np.zeros((size, size))
        for i in range(count):
            out[i * dim:(i + 1) * dim, i * dim:(i + 1) * dim] = a[i]
        return out
    if a.ndim == 2 and a.shape == (size, size):
        return a.copy()
    raise ValueError(f"cannot build a {size}x{size} block gain from shape {a.shape}")


@dataclass(frozen=True, eq=False)
class GainConfig:
    """Controller gains for N agents of dimension n coupled through M edges.

    ``Pi`` and ``K`` are block-diagonal (N*n square), ``Delta`` is the M x M
    diagonal edge weighting of the synchronized protocols, ``K_zeta`` the
    (M*n square) edge spring stiffness and ``zeta_d`` the stacked desired
    edge displacements.
    """

    Pi: np.ndarray
    K: np.ndarray
    Delta: np.ndarray
    K_zeta: np.ndarray
    zeta_d: np.ndarray

    def __post_init__(self):
        for name in ("Pi", "K", "Delta", "K_zeta"):
            A = np.asarray(getattr(self, name), dtype=float)
            if A.ndim != 2 or A.shape[0] != A.shape[1]:
                raise ValueError(f"{name} must be square, got shape {A.shape}")
            if not np.allclose(A, A.T, rtol=0, atol=1e-12):
                raise ValueError(f"{name} must be symmetric")
            object.__setattr__(self, name, A)
        object.__setattr__(self, "zeta_d", np.asarray(self.zeta_d, dtype=float).reshape(-1))
        if self.Pi.shape != self.K.shape:
            raise ValueError("Pi and K must have the same shape")
        if self.K_zeta.shape[0] != self.zeta_d.size:
            raise ValueError("K_zeta and zeta_d sizes disagree")

    @classmethod
    def build(cls, num_agents, dim, num_edges, *, Pi, K, Delta=1.0, K_zeta=1.0, zeta_d=0.0):
        """Gains from scalars, per-agent lists or blocks (see :func:`block_gain`)."""
        zd = np.asarray(zeta_d, dtype=float)
        if zd.ndim == 0:
            zd = np.full(num_edges * dim, float(zd))
        elif zd.size == dim and num_edges * dim != dim:
            zd = np.tile(zd.reshape(-1), num_edges)
        return cls(
            Pi=block_gain(Pi, num_agents, dim),
            K=block_gain(K, num_agents, dim),
            Delta=block_gain(Delta, num_edges, 1),
            K_zeta=block_gain(K_zeta, num_edges, dim),
            zeta_d=zd,
        )

    @property
    def size(self) -> int:
        return self.Pi.shape[0]

    def block(self, name: str, agent: int, dim: int) -> np.ndarray:
        """The dim x dim diagonal block of ``name`` for a 1-based agent index."""
        A = getattr(self, name)
        i = (agent - 1) * dim
        return A[i:i + dim, i:i + dim]

    def require_spd(self, *names):
        for name in names or ("Pi", "K", "Delta", "K_zeta"):
            A = getattr(self, name)
            if A.size and np.linalg.eigvalsh(A)[0] <= 0:
                raise ValueError(f"gain {name} is not positive definite")


@dataclass(frozen=True, eq=False)
class ReferenceTrajectory:
    """A C^2 reference q_d(t) with its first two derivatives."""

    position: Callable[[float], np.ndarray]
    velocity: Callable[[float], np.ndarray]
    acceleration: Callable[[float], np.ndarray]
    dim: int
    kind: str = "custom"

    def at(self, t):
        return self.position(t), self.velocity(t), self.acceleration(t)

    def consistency_error(self, times, h=1e-4) -> float:
        """Largest finite-difference mismatch between q_d and its stated derivatives."""
        worst = 0.0
        for t in times:
            dq = (self.position(t + h) - self.position(t - h)) / (2 * h)
            ddq = (self.velocity(t + h) - self.velocity(t - h)) / (2 * h)
            worst = max(worst, float(np.max(np.abs(dq - self.velocity(t)))),
                        float(np.max(np.abs(ddq - self.acceleration(t)))))
        return worst


def constant_reference(value) -> ReferenceTrajectory:
    qd = np.atleast_1d(np.asarray(value, dtype=float)).copy()
    zero = np.zeros_like(qd)
    qd.flags.writeable = False
    zero.flags.writeable = False
    return ReferenceTrajectory(lambda t: qd, lambda t: zero, lambda t: zero, qd.size, "constant")


def sinusoid_reference(amplitude, frequency, phase=0.0, offset=0.0) -> ReferenceTrajectory:
    """q_d(t) = offset + amplitude * sin(frequency * t + phase), elementwise (frequency in rad/s)."""
    A, w, p, c = np.broadcast_arrays(*(np.atleast_1d(np.asarray(x, dtype=float))
                                       for x in (amplitude, frequency, phase, offset)))
    A, w, p, c = (x.copy() for x in (A, w, p, c))
    return ReferenceTrajectory(
        lambda t: c + A * np.sin(w * t + p),
        lambda t: A * w * np.cos(w * t + p),
        lambda t: -A * w**2 * np.sin(w * t + p),
        A.size,
        "sinusoid",
    )


def polynomial_reference(coefficients) -> ReferenceTrajectory:
    """q_d(t) = sum_k c_k t^k per coordinate; ``coefficients`` has one row per coordinate."""
    C = np.atleast_2d(np.asarray(coefficients, dtype=float))
    polys = [np.polynomial.Polynomial(row) for row in C]
    d1 = [p.deriv(1) for p in polys]
    d2 = [p.deriv(2) for p in polys]
    return ReferenceTrajectory(
        lambda t: np.array([p(t) for p in polys]),
        lambda t: np.array([p(t) for p in d1]),
        lambda t: np.array([p(t) for p in d2]),
        len(polys),
        "polynomial",
    )


# --------------------------------------------------------------------------
# state containers


@dataclass
class EdgeSpringState:
    zeta: np.ndarray
    zeta_d: np.ndarray


@dataclass
class SlidingVariables:
    q_tilde: np.ndarray
    v_r: np.ndarray
    s: np.ndarray


# --------------------------------------------------------------------------
# single-agent laws


def _single_law(model, q_i, v_i, ref, Pi_i, K_i, u_i, backstepping):
    qd, dqd, ddqd = (np.atleast_1d(np.asarray(x, dtype=float)) for x in ref)
    q_i = np.asarray(q_i, dtype=float)
    v_i = np.asarray(v_i, dtype=float)
    Pi_i = np.atleast_2d(Pi_i)
    K_i = np.atleast_2d(K_i)
    q_tilde = q_i - qd
    v_r = dqd - Pi_i @ q_tilde
    dv_r = ddqd - Pi_i @ (v_i - dqd)
    s = v_i - v_r
    tau = (model.mass_matrix(q_i) @ dv_r + model.coriolis_matrix(q_i, v_i) @ v_r
           + model.gravity_vector(q_i) - K_i @ s)
    if backstepping:
        tau = tau - Pi_i @ q_tilde
    if u_i is not None:
        tau = tau + u_i
    return tau


def slotine_li_single(model, q_i, v_i, ref, Pi_i, K_i, u_i=None):
    """Slotine-Li tracking torque for one agent.

    The velocity reference is v_r = dq_d/dt - Pi (q - q_d) and the sliding
    variable s = v - v_r; the closed loop is M ds/dt + C s + K s = u.
    """
    return _single_law(model, q_i, v_i, ref, Pi_i, K_i, u_i, backstepping=False)


def backstepping_single(model, q_i, v_i, ref, Pi_i, K_i, u_i=None):
    """Slotine-Li torque with the extra position-error feedback -Pi (q - q_d)."""
    return _single_law(model, q_i, v_i, ref, Pi_i, K_i, u_i, backstepping=True)


# --------------------------------------------------------------------------
# edge springs and interconnection


def _lift_edge_gain(K_zeta, size):
    K_zeta = np.atleast_2d(np.asarray(K_zeta, dtype=float))
    if K_zeta.shape == (size, size):
        return K_zeta
    dim = K_zeta.shape[0]
    if size % dim:
        raise ValueError(f"K_zeta of shape {K_zeta.shape} does not fit {size} edge coordinates")
    return np.kron(np.eye(size // dim), K_zeta)


def edge_potential(espring: EdgeSpringState, K_zeta) -> float:
    """Quadratic spring energy 1/2 (zeta - zeta_d)^T K_zeta (zeta - zeta_d), summed over edges."""
    e = np.asarray(espring.zeta, float) - np.asarray(espring.zeta_d, float)
    return float(0.5 * e @ _lift_edge_gain(K_zeta, e.size) @ e)


def spring_edge_rhs(espring: EdgeSpringState, mu, K_zeta, potential_grad=None):
    """Edge spring dynamics dzeta/dt = mu - dP/dzeta with output tau_edge = dP/dzeta.

    ``potential_grad`` replaces the quadratic potential by any convex one,
    given through its gradient.
    """
    zeta = np.asarray(espring.zeta, dtype=float)
    if potential_grad is None:
        tau_edge = _lift_edge_gain(K_zeta, zeta.size) @ (zeta - np.asarray(espring.zeta_d, float))
    else:
        tau_edge = np.asarray(potential_grad(zeta), dtype=float)
    return np.asarray(mu, dtype=float) - tau_edge, tau_edge


def interconnect(B_lift, y, tau_edge):
    """mu = (B^T (x) I) y,  u = -(B (x) I) tau_edge."""
    B_lift = np.asarray(B_lift)
    y = np.asarray(y, dtype=float)
    tau_edge = np.asarray(tau_edge, dtype=float)
    if y.shape != (B_lift.shape[0],) or tau_edge.shape != (B_lift.shape[1],):
        raise ValueError(
            f"shape mismatch: incidence {B_lift.shape}, y {y.shape}, tau_edge {tau_edge.shape}"
        )
    return B_lift.T @ y, -(B_lift @ tau_edge)


def damping_input(gain):
    """Passive external input u = -gain * s for the synchronized laws."""
    def alpha(s):
        return -gain * s
    return alpha


# --------------------------------------------------------------------------
# network laws


def _tiled(ref, N):
    """1_N (x) q_d and the same for both derivatives."""
    return tuple(np.repeat(np.atleast_1d(np.asarray(x, dtype=float))[None, :], N, axis=0).reshape(-1)
                 for x in ref)


def coupling_matrix(graph: NetworkGraph, gains: GainConfig) -> np.ndarray:
    """[Pi + B Delta B^T] (x) I_n, with Pi already block-diagonal."""
    B = graph.incidence
    return gains.Pi + kron_lift(B @ gains.Delta @ B.T, graph.agent_dim)


def _network_torque(plant, q, v, dv_r, v_r, s, K, extra):
    N, n = plant.N, plant.n
    qb, vb = q.reshape(N, n), v.reshape(N, n)
    M = plant.mass(qb)
    C = plant.coriolis(qb, vb)
    g = plant.gravity(qb)
    tau = (matvec(M, dv_r.reshape(N, n)) + matvec(C, v_r.reshape(N, n)) + g).reshape(-1) - K @ s
    if extra is not None:
        tau = tau + extra
    return tau, M, C, g


def sync_sliding(graph: NetworkGraph, gains: GainConfig, state, ref, check=True) -> SlidingVariables:
    """Network sliding variables: q~ = q - 1 (x) q_d, v_r, and s = v - v_r."""
    N = graph.num_vertices
    Qd, dQd, _ = _tiled(ref, N)
    A = coupling_matrix(graph, gains)
    if check:
        B = graph.incidence
        leak = kron_lift(B @ gains.Delta @ B.T, graph.agent_dim) @ Qd
        if np.max(np.abs(leak), initial=0.0) > 1e-12 * (1 + np.max(np.abs(Qd))):
            raise AssertionError("coupling does not annihilate the synchronized reference")
    q_tilde = state.q - Qd
    v_r = dQd - A @ q_tilde
    return SlidingVariables(q_tilde, v_r, state.v - v_r)


def _sync_torque(models, graph, gains, state, ref, u, backstepping):
    plant = as_plant(models)
    N = graph.num_vertices
    Qd, dQd, ddQd = _tiled(ref, N)
    A = coupling_matrix(graph, gains)
    q_tilde = state.q - Qd
    v_r = dQd - A @ q_tilde
    s = state.v - v_r
    dv_r = ddQd - A @ (state.v - dQd)
    extra = None if u is None else np.asarray(u, dtype=float)
    if backstepping:
        extra = -(A @ q_tilde) if extra is None else extra - A @ q_tilde
    return _network_torque(plant, state.q, state.v, dv_r, v_r, s, gains.K, extra)[0]


def sync_slotine_li_control(models, graph, gains, state, ref, u=None):
    """tau = M dv_r/dt + C v_r + g - K s + u for the network sliding variable.

    dv_r/dt uses the measured velocity, so no acceleration is needed.
    """
    return _sync_torque(models, graph, gains, state, ref, u, backstepping=False)


def sync_backstepping_control(models, graph, gains, state, ref, u=None):
    """Synchronized Slotine-Li torque minus ([Pi + B Delta B^T] (x) I) q~."""
    return _sync_torque(models, graph, gains, state, ref, u, backstepping=True)


def node_edge_closed_loop_rhs(models, graph, state, espring: EdgeSpringState, gains, ref):
    """(dq/dt, dv/dt, dzeta/dt) of agents under backstepping laws coupled by edge springs."""
    qd, dqd, ddqd = (np.atleast_1d(np.asarray(r, dtype=float)) for r in ref)
    frozen = ReferenceTrajectory(lambda t: qd, lambda t: dqd, lambda t: ddqd, qd.size, "frozen")
    gains = replace(gains, zeta_d=np.asarray(espring.zeta_d, dtype=float))
    loop = NodeEdgeSpringLoop(models, graph, gains, frozen)
    dx = loop.rhs(state.t, np.concatenate([state.q, state.v, espring.zeta]))
    return loop.split(dx)


# --------------------------------------------------------------------------
# closed loops on a flat state vector


class ClosedLoop:
    """A protocol wired to a plant; the state vector is [q, v] or [q, v, zeta].

    Every law here has the form tau = M dv_r/dt + C v_r + g + w, where v_r,
    dv_r/dt, the sliding variable s, the feedback w and the edge dynamics are
    affine in the error x - x_ref. That affine part is assembled once into
    ``self.linear`` so a right-hand side evaluation needs a single product.
    """

    protocol: str
    has_edges = False
    backstepping = False

    def __init__(self, models, graph: NetworkGraph, gains: GainConfig,
                 reference: ReferenceTrajectory, external_input=None):
        self.plant: NetworkPlant = as_plant(models)
        self.graph = graph
        self.gains = gains
        self.reference = reference
        self.external_input = external_input
        self.N, self.n = self.plant.N, self.plant.n
        if graph.num_vertices != self.N or graph.agent_dim != self.n:
            raise ValueError(
                f"graph has N={graph.num_vertices}, n={graph.agent_dim} but the plant has "
                f"N={self.N}, n={self.n}"
            )
        if reference.dim != self.n:
            raise ValueError(f"reference has dimension {reference.dim}, agents have {self.n}")
        if gains.size != self.N * self.n:
            raise ValueError(f"gains sized for {gains.size} coordinates, need {self.N * self.n}")
        self.B_lift = graph.lifted_incidence
        self.M_edges = graph.num_edges
        self.A = self.position_error_gain()
        self.linear = self._linear_operator()
        self._constant_ref = _tiled(reference.at(0.0), self.N) if reference.kind == "constant" else None
        self._constant_xref = self._xref(self._constant_ref) if self._constant_ref else None

    @property
    def size(self) -> int:
        return 2 * self.N * self.n + (self.M_edges * self.n if self.has_edges else 0)

    def stacked_reference(self, t):
        """(1 (x) q_d, 1 (x) dq_d/dt, 1 (x) d2q_d/dt2) at time t."""
        if self._constant_ref is not None:
            return self._constant_ref
        return _tiled(self.reference.at(t), self.N)

    def initial_state(self, q0, v0, zeta0=None) -> np.ndarray:
        parts = [np.asarray(q0, float).reshape(-1), np.asarray(v0, float).reshape(-1)]
        if self.has_edges:
            zeta0 = self.B_lift.T @ parts[0] if zeta0 is None else np.asarray(zeta0, float).reshape(-1)
            parts.append(zeta0)
        x = np.concatenate(parts)
        if x.size != self.size:
            raise ValueError(f"initial state has {x.size} entries, expected {self.size}")
        return x

    def split(self, x):
        Nn = self.N * self.n
        q, v = x[:Nn], x[Nn:2 * Nn]
        if self.has_edges:
            return q, v, x[2 * Nn:]
        return q, v

    def position_error_gain(self) -> np.ndarray:
        """Matrix A of the closed-loop position error dynamics dq~/dt + A q~ = s."""
        return self.gains.Pi

    def errors(self, t, x):
        """Error coordinates (q~, s) at (t, x)."""
        Qd, dQd, _ = self.stacked_reference(t)
        Nn = self.N * self.n
        q_tilde = x[:Nn] - Qd
        return q_tilde, x[Nn:2 * Nn] - dQd + self.A @ q_tilde

    def _xref(self, ref):
        parts = [ref[0], ref[1]]
        if self.has_edges:
            parts.append(self.gains.zeta_d)
        return np.concatenate(parts)

    def _feedback_rows(self):
        """w as a linear map of (q~, v - dq_d/dt, zeta - zeta_d)."""
        A, K = self.A, self.gains.K
        w_q = -K @ A - (A if self.backstepping else 0)
        return w_q, -K

    def _linear_operator(self):
        A = self.A
        Z = np.zeros_like(A)
        I = np.eye(A.shape[0])
        w_q, w_v = self._feedback_rows()
        rows = [[-A, Z], [A, I], [Z, -A], [w_q, w_v]]
        return np.block(rows)

    def _evaluate(self, t, x):
        """Torque, plant matrices and the affine pieces at (t, x)."""
        Nn, N, n = self.N * self.n, self.N, self.n
        Qd, dQd, ddQd = self.stacked_reference(t)
        xref = self._constant_xref if self._constant_xref is not None else self._xref((Qd, dQd))
        y = self.linear @ (x - xref)
        v_r = dQd + y[:Nn]
        s = y[Nn:2 * Nn]
        dv_r = ddQd + y[2 * Nn:3 * Nn]
        w = y[3 * Nn:4 * Nn]
        u = None
        if self.external_input is not None:
            u = np.asarray(self.external_input(s), float)
            w = w + u
        qb = x[:Nn].reshape(N, n)
        vb = x[Nn:2 * Nn].reshape(N, n)
        M = self.plant.mass(qb)
        C = self.plant.coriolis(qb, vb)
        g = self.plant.gravity(qb)
        tau = (matvec(M, dv_r.reshape(N, n)) + matvec(C, v_r.reshape(N, n)) + g).reshape(-1) + w
        return tau, M, C, g, s, u, y[4 * Nn:]

    def _accel(self, x, tau, M, C, g):
        N, n = self.N, self.n
        vb = x[N * n:2 * N * n].reshape(N, n)
        f = tau.reshape(N, n) - matvec(C, vb) - g
        return self.plant.solve_mass(M, f).reshape(-1)

    def rhs(self, t, x):
        tau, M, C, g, _, _, _ = self._evaluate(t, x)
        Nn = self.N * self.n
        return np.concatenate([x[Nn:2 * Nn], self._accel(x, tau, M, C, g)])

    def control(self, t, x):
        return self._evaluate(t, x)[0]

    def residual(self, t, x) -> float:
        """Max-abs residual of the closed-loop error equations at (t, x).

        The derivative comes from :meth:`rhs`; the error equations are
        rebuilt term by term from the plant matrices.
        """
        Nn, N, n = self.N * self.n, self.N, self.n
        dx = self.rhs(t, x)
        _, M, C, _, _, u, _ = self._evaluate(t, x)
        q_tilde, s = self.errors(t, x)
        _, dQd, ddQd = self.stacked_reference(t)
        dq_tilde = dx[:Nn] - dQd
        ds = dx[Nn:2 * Nn] - (ddQd - self.A @ dq_tilde)
        r1 = dq_tilde + self.A @ q_tilde - s
        r2 = (matvec(M, ds.reshape(N, n)) + matvec(C, s.reshape(N, n))).reshape(-1) + self.gains.K @ s
        if self.backstepping:
            r2 = r2 + self.A @ q_tilde
        if u is not None:
            r2 = r2 - u
        return float(max(np.max(np.abs(r1)), np.max(np.abs(r2))))


class SyncSlotineLiLoop(ClosedLoop):
    """tau = M dv_r + C v_r + g - K s + u with the network velocity reference."""

    protocol = "sync_slotine_li"

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        check_connectivity(self.graph)

    def position_error_gain(self):
        return coupling_matrix(self.graph, self.gains)


class SyncBacksteppingLoop(SyncSlotineLiLoop):
    protocol = "sync_backstepping"
    backstepping = True


class SingleSlotineLiLoop(ClosedLoop):
    """Every agent runs its own Slotine-Li law; the graph is not used."""

    protocol = "single_slotine_li"


class SingleBacksteppingLoop(ClosedLoop):
    protocol = "single_backstepping"
    backstepping = True


class NodeEdgeSpringLoop(ClosedLoop):
    """Backstepping law at each node, u = -(B (x) I) tau_edge, mu = (B^T (x) I) s.

    The spring potential is quadratic unless ``potential_grad`` supplies the
    gradient of another convex potential.
    """

    protocol = "node_edge_spring"
    has_edges = True
    backstepping = True

    def __init__(self, *args, potential_grad=None, **kwargs):
        self.potential_grad = potential_grad
        super().__init__(*args, **kwargs)
        check_connectivity(self.graph)
        if self.gains.K_zeta.shape[0] != self.M_edges * self.n:
            raise ValueError("K_zeta must have one n x n block per edge")
        if self.external_input is not None:
            raise ValueError("the node-and-edge protocol takes its input from the edge springs")

    def _linear_operator(self):
        Nn, Mn = self.N * self.n, self.M_edges * self.n
        Pi, K, B = self.gains.Pi, self.gains.K, self.B_lift
        Kz = self.gains.K_zeta if self.potential_grad is None else np.zeros((Mn, Mn))
        Z, I = np.zeros((Nn, Nn)), np.eye(Nn)
        ZE = np.zeros((Nn, Mn))
        return np.block([
            [-Pi, Z, ZE],                       # v_r - dq_d/dt
            [Pi, I, ZE],                        # s
            [Z, -Pi, ZE],                       # dv_r/dt - d2q_d/dt2
            [-K @ Pi - Pi, -K, -B @ Kz],        # -K s - Pi q~ + u
            [B.T @ Pi, B.T, -Kz],               # dzeta/dt = mu - tau_edge
        ])

    def _evaluate(self, t, x):
        tau, M, C, g, s, u, zeta_dot = super()._evaluate(t, x)
        if self.potential_grad is not None:
            tau_edge = np.asarray(self.potential_grad(self.split(x)[2]), float)
            tau = tau - self.B_lift @ tau_edge
            zeta_dot = zeta_dot - tau_edge
        return tau, M, C, g, s, u, zeta_dot

    def rhs(self, t, x):
        tau, M, C, g, _, _, zeta_dot = self._evaluate(t, x)
        Nn = self.N * self.n
        return np.concatenate([x[Nn:2 * Nn], self._accel(x, tau, M, C, g), zeta_dot])

    def edge_force(self, t, x):
        """tau_edge = dP_zeta/dzeta at the current edge state."""
        zeta = self.split(x)[2]
        if self.potential_grad is not None:
            return np.asarray(self.potential_grad(zeta), float)
        return self.gains.K_zeta @ (zeta - self.gains.zeta_d)

    def residual(self, t, x) -> float:
        Nn, N, n = self.N * self.n, self.N, self.n
        dx = self.rhs(t, x)
        _, M, C, _, _, _, _ = self._evaluate(t, x)
        q_tilde, s = self.errors(t, x)
        tau_edge = self.edge_force(t, x)
        _, dQd, ddQd = self.stacked_reference(t)
        Pi = self.gains.Pi
        dq_tilde = dx[:Nn] - dQd
        ds = dx[Nn:2 * Nn] - (ddQd - Pi @ dq_tilde)
        r1 = dq_tilde + Pi @ q_tilde - s
        r2 = ((matvec(M, ds.reshape(N, n)) + matvec(C, s.reshape(N, n))).reshape(-1)
              + self.gains.K @ s + Pi @ q_tilde + self.B_lift @ tau_edge)
        r3 = dx[2 * Nn:] + tau_edge - self.B_lift.T @ s
        return float(max(np.max(np.abs(r1)), np.max(np.abs(r2)), np.max(np.abs(r3), initial=0.0)))


LOOPS = {
    "node_edge_spring": NodeEdgeSpringLoop,
    "sync_slotine_li": SyncSlotineLiLoop,
    "sync_backstepping": SyncBacksteppingLoop,
    "single_slotine_li": SingleSlotineLiLoop,
    "single_backstepping": SingleBacksteppingLoop,
}


def make_loop(protocol, models, graph, gains, reference, **kwargs) -> ClosedLoop:
    try:
        cls = LOOPS[protocol]
    except KeyError:
        raise ValueError(f"unknown protocol {protocol!r}; choose from {list(LOOPS)}") from None
    return cls(models, graph, gains, reference, **kwargs)
