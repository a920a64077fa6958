"""Reference computations that share no code with the package."""

import functools

import numpy as np
import sympy as sp
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components


@functools.lru_cache(maxsize=None)
def _two_link_symbolic():
    q1, q2, v1, v2 = sp.symbols("q1 q2 v1 v2", real=True)
    m1, m2, l1, l2, g = sp.symbols("m1 m2 l1 l2 g", positive=True)
    q = sp.Matrix([q1, q2])
    v = sp.Matrix([v1, v2])
    # tip positions, angles from the downward vertical
    x1, y1 = l1 * sp.sin(q1), -l1 * sp.cos(q1)
    x2, y2 = x1 + l2 * sp.sin(q1 + q2), y1 - l2 * sp.cos(q1 + q2)
    vel = lambda x, y: (sp.diff(x, q1) * v1 + sp.diff(x, q2) * v2,
                        sp.diff(y, q1) * v1 + sp.diff(y, q2) * v2)
    vx1, vy1 = vel(x1, y1)
    vx2, vy2 = vel(x2, y2)
    T = sp.Rational(1, 2) * (m1 * (vx1**2 + vy1**2) + m2 * (vx2**2 + vy2**2))
    P = m1 * g * (y1 + l1) + m2 * g * (y2 + l1 + l2)
    M = sp.simplify(sp.hessian(T, v))
    C = sp.zeros(2, 2)
    for k in range(2):
        for j in range(2):
            C[k, j] = sum(
                sp.Rational(1, 2) * (sp.diff(M[k, j], q[i]) + sp.diff(M[k, i], q[j]) - sp.diff(M[i, j], q[k])) * v[i]
                for i in range(2)
            )
    grav = sp.Matrix([sp.diff(P, qi) for qi in q])
    args = (q1, q2, v1, v2, m1, m2, l1, l2, g)
    return tuple(sp.lambdify(args, expr, "numpy") for expr in (M, C, grav, P))


def two_link_terms(q, v, m1=1.0, m2=1.0, l1=1.0, l2=1.0, gravity=9.81):
    """(M, C, g, P) from the Lagrangian, Coriolis via Christoffel symbols."""
    fM, fC, fg, fP = _two_link_symbolic()
    args = (q[0], q[1], v[0], v[1], m1, m2, l1, l2, gravity)
    return (np.array(fM(*args), float), np.array(fC(*args), float),
            np.array(fg(*args), float).reshape(-1), float(fP(*args)))


def lyapunov_vec(A, Q):
    """Solve X A + A^T X = -Q via the Kronecker-vectorized linear system."""
    n = A.shape[0]
    eye = np.eye(n)
    op = np.kron(A.T, eye) + np.kron(eye, A.T)
    X = np.linalg.solve(op, -Q.reshape(-1, order="F")).reshape(n, n, order="F")
    return 0.5 * (X + X.T)


def component_count(num_vertices, edges):
    """Weakly connected components via scipy's graph routines (1-based edges)."""
    if not edges:
        return num_vertices
    rows = [a - 1 for a, _ in edges]
    cols = [b - 1 for _, b in edges]
    adj = csr_matrix((np.ones(len(edges)), (rows, cols)), shape=(num_vertices, num_vertices))
    return connected_components(adj, directed=True, connection="weak")[0]


def ring_laplacian_spectrum(N):
    return np.sort(2 - 2 * np.cos(2 * np.pi * np.arange(N) / N))

