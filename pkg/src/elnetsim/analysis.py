"""Storage (Lyapunov) functions, exponential rate bounds and trace certification."""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.linalg import solve_continuous_lyapunov

from .controllers import ClosedLoop, GainConfig, coupling_matrix
from .dynamics import as_plant
from .graph import NetworkGraph, kron_lift


class TraceTooCoarse(ValueError):
    def __init__(self, step, required):
        self.step = step
        self.required = required
        super().__init__(
            f"trace spacing {step:.3g} s is too coarse to certify; "
            f"record at least every {required:.3g} s"
        )


@dataclass(frozen=True)
class RateBounds:
    """k1 |x|^2 <= S <= k2 |x|^2 and dS/dt <= -k3 |x|^2, hence dS/dt <= -beta S."""

    k1: float
    k2: float
    k3: float

    def __post_init__(self):
        if not (0 < self.k1 <= self.k2 and self.k3 > 0):
            raise ValueError(f"inconsistent rate bounds k1={self.k1}, k2={self.k2}, k3={self.k3}")

    @property
    def beta(self) -> float:
        return self.k3 / self.k2


def _eig(A):
    return np.linalg.eigvalsh(A)


def _half_quad(A, x):
    return 0.5 * float(x @ A @ x)


def _kinetic(plant, q, s):
    N, n = plant.N, plant.n
    sb = s.reshape(N, n)
    return 0.5 * float(np.einsum("ni,nij,nj->", sb, plant.mass(q.reshape(N, n)), sb))


def storage_node_edge(q_tilde, s, zeta, q, gains: GainConfig, models) -> float:
    """1/2 q~^T Pi q~ + 1/2 s^T M(q) s + P_zeta(zeta)."""
    e = np.asarray(zeta, float) - gains.zeta_d
    return (_half_quad(gains.Pi, np.asarray(q_tilde, float))
            + _kinetic(as_plant(models), np.asarray(q, float), np.asarray(s, float))
            + _half_quad(gains.K_zeta, e))


def storage_sync(q_tilde, s, q, gains: GainConfig, graph: NetworkGraph, models) -> float:
    """1/2 q~^T ([Pi + B Delta B^T] (x) I) q~ + 1/2 s^T M(q) s."""
    return (_half_quad(coupling_matrix(graph, gains), np.asarray(q_tilde, float))
            + _kinetic(as_plant(models), np.asarray(q, float), np.asarray(s, float)))


def storage_sliding(s, q, models) -> float:
    """1/2 s^T M(q) s, the storage of the sliding-variable dynamics alone."""
    return _kinetic(as_plant(models), np.asarray(q, float), np.asarray(s, float))


def mass_bounds(models, q_range=None) -> tuple[float, float]:
    """Extreme eigenvalues of M(q) over all agents.

    Without ``q_range`` the model-declared global bounds are used. With a box
    ``(lower, upper)`` of n-vectors the mass matrices are scanned on a grid
    over that box instead.
    """
    plant = as_plant(models)
    if q_range is None:
        return plant.mass_bounds
    lo, hi = (np.broadcast_to(np.asarray(b, float), (plant.n,)) for b in q_range)
    axes = [np.linspace(a, b, 9) for a, b in zip(lo, hi)]
    grid = np.array(list(itertools.product(*axes)))
    m_low, m_high = np.inf, -np.inf
    for model in {id(m): m for m in plant.models}.values():
        eig = np.linalg.eigvalsh(model.mass_matrix(grid))
        m_low = min(m_low, float(eig[:, 0].min()))
        m_high = max(m_high, float(eig[:, -1].max()))
    return m_low, m_high


def rate_bounds_node_edge(gains: GainConfig, models, q_range=None) -> RateBounds:
    """Rate constants of the node-and-edge spring closed loop.

    k2 = max{lmax(Pi), lmax(M), lmax(K_zeta)}, k3 = min{lmin(Pi^2), lmin(K), lmin(K_zeta^2)}.
    """
    gains.require_spd("Pi", "K", "K_zeta")
    m_low, m_high = mass_bounds(models, q_range)
    pi, k = _eig(gains.Pi), _eig(gains.K)
    lows, highs, rates = [pi[0], m_low], [pi[-1], m_high], [_eig(gains.Pi @ gains.Pi)[0], k[0]]
    if gains.K_zeta.size:
        kz = _eig(gains.K_zeta)
        lows.append(kz[0])
        highs.append(kz[-1])
        rates.append(_eig(gains.K_zeta @ gains.K_zeta)[0])
    return RateBounds(float(min(lows)), float(max(highs)), float(min(rates)))


def rate_bounds_sync(gains: GainConfig, graph: NetworkGraph, models, q_range=None) -> RateBounds:
    """Rate constants of the synchronized backstepping closed loop.

    With A = [Pi + B Delta B^T] (x) I: k2 = max{lmax(A), lmax(M)},
    k3 = min{lmin(A^2), lmin(K)}.
    """
    gains.require_spd("Pi", "K", "Delta")
    A = coupling_matrix(graph, gains)
    return _rates_from(A, gains.K, models, q_range)


def _rates_from(A, K, models, q_range):
    m_low, m_high = mass_bounds(models, q_range)
    a = _eig(A)
    return RateBounds(float(min(a[0], m_low)), float(max(a[-1], m_high)),
                      float(min(_eig(A @ A)[0], _eig(K)[0])))


def rate_bounds_sliding(gains: GainConfig, models, q_range=None) -> RateBounds:
    """Rates for the sliding storage 1/2 s^T M s alone (Slotine-Li laws)."""
    gains.require_spd("K")
    m_low, m_high = mass_bounds(models, q_range)
    return RateBounds(float(m_low), float(m_high), float(_eig(gains.K)[0]))


def check_sliding_stability(Pi, Delta, graph: NetworkGraph, Q):
    """Solve P(-A) + (-A)^T P = -Q for the sliding dynamics dq~/dt = -A q~.

    A = [Pi + B Delta B^T] (x) I_n. Returns the symmetric solution P and
    whether it is positive definite.
    """
    Q = np.asarray(Q, dtype=float)
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1] or not np.allclose(Q, Q.T, atol=1e-12):
        raise ValueError("Q must be a symmetric square matrix")
    if np.linalg.eigvalsh(Q)[0] <= 0:
        raise ValueError("Q must be positive definite")
    n = graph.agent_dim
    B = graph.incidence
    Pi = np.asarray(Pi, dtype=float)
    if Pi.shape == (graph.num_vertices, graph.num_vertices) and n > 1:
        Pi = kron_lift(Pi, n)
    A = Pi + kron_lift(B @ np.asarray(Delta, float) @ B.T, n)
    if A.shape != Q.shape:
        raise ValueError(f"Q has shape {Q.shape}, expected {A.shape}")
    P = solve_continuous_lyapunov(-A.T, -Q)
    if not np.all(np.isfinite(P)):
        raise ValueError("Lyapunov solve produced non-finite entries")
    P = 0.5 * (P + P.T)
    try:
        np.linalg.cholesky(P)
        ok = True
    except np.linalg.LinAlgError:
        ok = False
    return P, ok


# --------------------------------------------------------------------------
# per-loop dispatch


def loop_storage(loop: ClosedLoop, t, x) -> float:
    """The strict Lyapunov (or storage) function certified for ``loop``."""
    q_tilde, s = loop.errors(t, x)
    q = x[:loop.N * loop.n]
    if loop.protocol == "node_edge_spring":
        return storage_node_edge(q_tilde, s, loop.split(x)[2], q, loop.gains, loop.plant)
    if loop.protocol in ("sync_backstepping", "single_backstepping"):
        return _half_quad(loop.A, q_tilde) + _kinetic(loop.plant, q, s)
    return _kinetic(loop.plant, q, s)


def loop_rate_bounds(loop: ClosedLoop, q_range=None) -> RateBounds:
    if loop.protocol == "node_edge_spring":
        return rate_bounds_node_edge(loop.gains, loop.plant, q_range)
    if loop.protocol == "sync_backstepping":
        return rate_bounds_sync(loop.gains, loop.graph, loop.plant, q_range)
    if loop.protocol == "single_backstepping":
        loop.gains.require_spd("Pi", "K")
        return _rates_from(loop.A, loop.gains.K, loop.plant, q_range)
    return rate_bounds_sliding(loop.gains, loop.plant, q_range)


# --------------------------------------------------------------------------
# certification

RESIDUAL_LIMIT = 1e-9


@dataclass
class CertificationReport:
    protocol: str
    beta: float
    tolerance: float
    times: np.ndarray
    storage: np.ndarray
    storage_rate: np.ndarray
    margins: np.ndarray
    envelope: np.ndarray
    envelope_violations: int
    monotone_violations: int
    max_residual: float
    first_violation_time: float | None
    max_control_mismatch: float | None = None
    passed: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(self.passed.values())

    def summary(self) -> str:
        status = "PASS" if self.ok else "FAIL"
        lines = [f"{status} {self.protocol}: beta={self.beta:.6g}, tol={self.tolerance:g}"]
        lines += [f"  {name}: {'pass' if good else 'FAIL'}" for name, good in self.passed.items()]
        lines.append(f"  envelope violations={self.envelope_violations}, "
                     f"monotonicity violations={self.monotone_violations}, "
                     f"max residual={self.max_residual:.3g}")
        if self.first_violation_time is not None:
            lines.append(f"  first violation at t={self.first_violation_time:.6g}")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        out = asdict(self)
        for key, value in out.items():
            if isinstance(value, np.ndarray):
                out[key] = value.tolist()
        out["ok"] = self.ok
        return out


def certify_trace(trace, loop: ClosedLoop, *, tol=0.05, beta=None, monotone_tol=1e-10,
                  residual_limit=RESIDUAL_LIMIT) -> CertificationReport:
    """Check the storage function of ``loop`` along a simulated trace.

    Verifies monotone decrease, the envelope S(t) <= S(0) exp(-(1 - tol) beta t)
    and the closed-loop residual at every recorded sample. When the trace
    carries torques they must match the loop's law, so a trace produced
    with other gains is rejected. ``beta`` defaults to the loop's certified
    rate.
    """
    if beta is None:
        beta = loop_rate_bounds(loop).beta
    times = np.asarray(trace.times, dtype=float)
    if times.size < 2:
        raise ValueError("need at least two samples to certify a trace")
    required = 1e-2 / beta
    step = float(np.max(np.diff(times)))
    if step > required * (1 + 1e-9):
        raise TraceTooCoarse(step, required)
    states = trace.states
    S = np.array([loop_storage(loop, t, x) for t, x in zip(times, states)])
    residuals = np.array([loop.residual(t, x) for t, x in zip(times, states)])
    dS = np.gradient(S, times)
    rate = (1 - tol) * beta
    margins = -dS - rate * S
    envelope = S[0] * np.exp(-rate * (times - times[0]))

    env_bad = S > envelope + 1e-14 * S[0]
    mono_bad = np.zeros_like(env_bad)
    mono_bad[1:] = np.diff(S) > monotone_tol * max(S[0], np.finfo(float).tiny)
    res_bad = residuals >= residual_limit
    passed = {}
    mismatch = None
    if trace.controls is not None:
        # recorded torques must be the ones this loop's law produces
        diff = [np.max(np.abs(u - loop.control(t, x)) / (1 + np.abs(u)))
                for t, x, u in zip(times, states, np.asarray(trace.controls, float))]
        mismatch = float(max(diff))
        res_bad = res_bad | (np.array(diff) >= residual_limit)
        passed["recorded_control"] = mismatch < residual_limit
    any_bad = env_bad | mono_bad | res_bad
    first = float(times[np.argmax(any_bad)]) if any_bad.any() else None
    return CertificationReport(
        protocol=loop.protocol,
        beta=float(beta),
        tolerance=float(tol),
        times=times,
        storage=S,
        storage_rate=dS,
        margins=margins,
        envelope=envelope,
        envelope_violations=int(env_bad.sum()),
        monotone_violations=int(mono_bad.sum()),
        max_residual=float(residuals.max()),
        first_violation_time=first,
        max_control_mismatch=mismatch,
        passed={
            "envelope": not env_bad.any(),
            "monotone_decrease": not mono_bad.any(),
            "closed_loop_residual": bool((residuals < residual_limit).all()),
            **passed,
        },
    )
