"""Communication graphs: incidence matrices, Kronecker lifting, Laplacians.

Vertices are numbered 1..N in the public interface (matching the scenario
files); matrices are ordinary 0-based numpy arrays.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np


@dataclass(frozen=True)
class NetworkGraph:
    """Directed graph on ``num_vertices`` agents of configuration dimension ``agent_dim``.

    Undirected graphs are stored with a fixed orientation (tail = smaller
    index); see :func:`undirected`. The orientation only flips the sign of
    the corresponding edge state. ``directed`` marks graphs whose edge
    directions are meaningful, which only affects connectivity warnings.
    """

    num_vertices: int
    edges: tuple[tuple[int, int], ...]
    agent_dim: int = 1
    directed: bool = False

    def __post_init__(self):
        if int(self.num_vertices) < 1:
            raise ValueError(f"num_vertices must be positive, got {self.num_vertices}")
        if int(self.agent_dim) < 1:
            raise ValueError(f"agent_dim must be positive, got {self.agent_dim}")
        edges = tuple((int(a), int(b)) for a, b in self.edges)
        for k, (tail, head) in enumerate(edges):
            for idx in (tail, head):
                if not 1 <= idx <= self.num_vertices:
                    raise ValueError(
                        f"edge {k + 1} ({tail}, {head}) references vertex {idx} "
                        f"outside 1..{self.num_vertices}"
                    )
            if tail == head:
                raise ValueError(f"edge {k + 1} is a self-loop at vertex {tail}")
        object.__setattr__(self, "edges", edges)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def incidence(self) -> np.ndarray:
        B = build_incidence(self)
        B.flags.writeable = False
        return B

    @cached_property
    def lifted_incidence(self) -> np.ndarray:
        BL = kron_lift(self.incidence, self.agent_dim)
        BL.flags.writeable = False
        return BL

    def neighbors(self, vertex: int) -> set[int]:
        """Vertices sharing an edge with ``vertex`` (1-based, either orientation)."""
        out = set()
        for tail, head in self.edges:
            if tail == vertex:
                out.add(head)
            elif head == vertex:
                out.add(tail)
        return out


def undirected(num_vertices, pairs, agent_dim=1) -> NetworkGraph:
    """Graph from unordered pairs, oriented with tail = smaller index."""
    edges = [(min(a, b), max(a, b)) for a, b in pairs]
    return NetworkGraph(num_vertices, tuple(edges), agent_dim)


def ring(num_vertices, agent_dim=1) -> NetworkGraph:
    """Cycle 1-2-...-N-1 with edges (i, i+1) and the closing edge (N, 1)."""
    edges = [(i, i + 1) for i in range(1, num_vertices)]
    if num_vertices > 2:
        edges.append((num_vertices, 1))
    return NetworkGraph(num_vertices, tuple(edges), agent_dim)


def build_incidence(graph: NetworkGraph) -> np.ndarray:
    """N x M incidence matrix: -1 at the tail of each edge, +1 at its head."""
    N = graph.num_vertices
    B = np.zeros((N, len(graph.edges)))
    for k, (tail, head) in enumerate(graph.edges):
        if not (1 <= tail <= N and 1 <= head <= N):
            raise ValueError(f"edge {k + 1} ({tail}, {head}) outside 1..{N}")
        B[tail - 1, k] = -1.0
        B[head - 1, k] = 1.0
    return B


def kron_lift(matrix, dim: int) -> np.ndarray:
    """``matrix`` (x) I_dim, acting on stacked dim-dimensional agent coordinates."""
    if int(dim) < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    A = np.asarray(matrix, dtype=float)
    if A.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {A.shape}")
    if dim == 1:
        return A.copy()
    return np.kron(A, np.eye(dim))


def laplacian(graph: NetworkGraph) -> np.ndarray:
    B = graph.incidence
    return B @ B.T


def _components(graph: NetworkGraph) -> int:
    parent = list(range(graph.num_vertices))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    count = graph.num_vertices
    for tail, head in graph.edges:
        a, b = find(tail - 1), find(head - 1)
        if a != b:
            parent[a] = b
            count -= 1
    return count


def num_components(graph: NetworkGraph) -> int:
    """Number of weakly connected components."""
    return _components(graph)


def is_weakly_connected(graph: NetworkGraph) -> bool:
    return _components(graph) == 1


def is_strongly_connected(graph: NetworkGraph) -> bool:
    """Every vertex reachable from vertex 1 along edge directions, and vice versa."""
    N = graph.num_vertices
    fwd = [[] for _ in range(N)]
    bwd = [[] for _ in range(N)]
    for tail, head in graph.edges:
        fwd[tail - 1].append(head - 1)
        bwd[head - 1].append(tail - 1)

    def reach(adj):
        seen = {0}
        stack = [0]
        while stack:
            for j in adj[stack.pop()]:
                if j not in seen:
                    seen.add(j)
                    stack.append(j)
        return len(seen) == N

    return reach(fwd) and reach(bwd)


def check_connectivity(graph: NetworkGraph) -> None:
    """Raise if the graph is disconnected; warn if only weakly connected.

    The synchronized protocols are stated for strongly connected graphs but
    only use B and B^T, so weak connectivity is enough to run them.
    """
    if not is_weakly_connected(graph):
        raise ValueError(
            f"graph has {num_components(graph)} weakly connected components; "
            "the protocols need a connected graph"
        )
    if graph.directed and not is_strongly_connected(graph):
        warnings.warn(
            "graph is weakly but not strongly connected as a directed graph; "
            "running with its undirected coupling",
            stacklevel=2,
        )
