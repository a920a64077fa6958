"""Built-in agent models and the name -> constructor catalog used by scenario files."""

from __future__ import annotations

import numpy as np

from .dynamics import AgentModel


def _positive(**params):
    for key, value in params.items():
        if not (np.isfinite(value) and value > 0):
            raise ValueError(f"{key} must be positive, got {value}")


def make_double_integrator(mass: float = 1.0, dof: int = 1) -> AgentModel:
    """Free point mass: M = mass * I, no Coriolis or potential forces."""
    _positive(mass=mass)
    eye = np.eye(dof)

    def mass_matrix(q):
        if dof == 1:
            return np.full(np.shape(q) + (1,), mass)
        return np.broadcast_to(mass * eye, np.shape(q)[:-1] + (dof, dof)).copy()

    def coriolis_matrix(q, v):
        return np.zeros(np.shape(q)[:-1] + (dof, dof))

    def gravity_vector(q):
        return np.zeros(np.shape(q))

    def potential(q):
        return np.zeros(np.shape(q)[:-1])

    return AgentModel(
        "double_integrator", dof, mass_matrix, coriolis_matrix, gravity_vector, potential,
        (mass, mass), {"mass": mass},
    )


def make_pendulum(mass: float = 1.0, length: float = 1.0, gravity: float = 9.81) -> AgentModel:
    """Planar pendulum, angle measured from the hanging equilibrium."""
    _positive(mass=mass, length=length, gravity=gravity)
    inertia = mass * length**2
    mgl = mass * gravity * length

    def mass_matrix(q):
        return np.full(np.shape(q)[:-1] + (1, 1), inertia)

    def coriolis_matrix(q, v):
        return np.zeros(np.shape(q)[:-1] + (1, 1))

    def gravity_vector(q):
        return mgl * np.sin(q)

    def potential(q):
        return mgl * (1.0 - np.cos(np.asarray(q)[..., 0]))

    return AgentModel(
        "pendulum", 1, mass_matrix, coriolis_matrix, gravity_vector, potential,
        (inertia, inertia), {"mass": mass, "length": length, "gravity": gravity},
    )


def make_two_link(m1: float = 1.0, m2: float = 1.0, l1: float = 1.0, l2: float = 1.0,
                  gravity: float = 9.81) -> AgentModel:
    """Planar two-link arm with point masses at the link tips.

    Joint angles q = (q1, q2): q1 from the downward vertical, q2 relative to
    link 1. The potential is zero with both links hanging.
    """
    _positive(m1=m1, m2=m2, l1=l1, l2=l2, gravity=gravity)
    a = m1 * l1**2 + m2 * (l1**2 + l2**2)
    b = m2 * l1 * l2
    d = m2 * l2**2

    def mass_matrix(q):
        c2 = np.cos(np.asarray(q)[..., 1])
        M = np.empty(c2.shape + (2, 2))
        M[..., 0, 0] = a + 2 * b * c2
        M[..., 0, 1] = M[..., 1, 0] = d + b * c2
        M[..., 1, 1] = d
        return M

    def coriolis_matrix(q, v):
        # Christoffel symbols of mass_matrix; only dM/dq2 is nonzero.
        h = -b * np.sin(np.asarray(q)[..., 1])
        v = np.asarray(v)
        C = np.empty(h.shape + (2, 2))
        C[..., 0, 0] = h * v[..., 1]
        C[..., 0, 1] = h * (v[..., 0] + v[..., 1])
        C[..., 1, 0] = -h * v[..., 0]
        C[..., 1, 1] = 0.0
        return C

    def gravity_vector(q):
        q = np.asarray(q)
        s1 = np.sin(q[..., 0])
        s12 = np.sin(q[..., 0] + q[..., 1])
        return np.stack([(m1 + m2) * gravity * l1 * s1 + m2 * gravity * l2 * s12,
                         m2 * gravity * l2 * s12], axis=-1)

    def potential(q):
        q = np.asarray(q)
        return ((m1 + m2) * gravity * l1 * (1 - np.cos(q[..., 0]))
                + m2 * gravity * l2 * (1 - np.cos(q[..., 0] + q[..., 1])))

    # lambda_max(M) is convex and lambda_min(M) concave in cos(q2), so both
    # extremes sit at cos(q2) = +-1.
    ends = np.linalg.eigvalsh(mass_matrix(np.array([[0.0, 0.0], [0.0, np.pi]])))
    bounds = (float(ends[:, 0].min()), float(ends[:, 1].max()))
    return AgentModel(
        "two_link", 2, mass_matrix, coriolis_matrix, gravity_vector, potential, bounds,
        {"m1": m1, "m2": m2, "l1": l1, "l2": l2, "gravity": gravity},
    )


CATALOG = {
    "double_integrator": make_double_integrator,
    "pendulum": make_pendulum,
    "two_link": make_two_link,
}

# Parameters accepted by each catalog entry (positive reals; dof is an integer).
PARAMETERS = {
    "double_integrator": ("mass", "dof"),
    "pendulum": ("mass", "length", "gravity"),
    "two_link": ("m1", "m2", "l1", "l2", "gravity"),
}


def make_model(name: str, params: dict | None = None) -> AgentModel:
    try:
        ctor = CATALOG[name]
    except KeyError:
        raise ValueError(f"unknown model {name!r}; choose from {sorted(CATALOG)}") from None
    params = dict(params or {})
    if "dof" in params:
        params["dof"] = int(params["dof"])
    unknown = set(params) - set(PARAMETERS[name])
    if unknown:
        raise ValueError(f"unknown parameters for {name}: {sorted(unknown)}")
    return ctor(**params)
