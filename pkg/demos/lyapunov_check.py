"""Stability of the sliding-manifold dynamics via the Lyapunov equation.

On the manifold the position errors obey dq/dt = -A q with
A = Pi + (B Delta B^T) kron I. For any SPD Q the solution P of
P(-A) + (-A)^T P = -Q is SPD exactly when -A is Hurwitz.
"""

import numpy as np

from elnetsim import GainConfig, check_sliding_stability, ring
from elnetsim.controllers import coupling_matrix

graph = ring(6)
gains = GainConfig.build(6, 1, graph.num_edges, Pi=3.5, K=12.0, Delta=1.0)
print("eigenvalues of A:", np.round(np.linalg.eigvalsh(coupling_matrix(graph, gains)), 6))

rng = np.random.default_rng(0)
R = rng.normal(size=(6, 6))
Q = R @ R.T + np.eye(6)
P, spd = check_sliding_stability(gains.Pi, gains.Delta, graph, Q)
print(f"P is SPD: {spd}, smallest eigenvalue {np.linalg.eigvalsh(P)[0]:.4f}")

# a negative position gain the coupling cannot compensate breaks stability
weak = GainConfig.build(6, 1, graph.num_edges, Pi=-0.5, K=12.0, Delta=0.1)
P, spd = check_sliding_stability(weak.Pi, weak.Delta, graph, Q)
print(f"with Pi=-0.5, Delta=0.1: P is SPD: {spd}")
