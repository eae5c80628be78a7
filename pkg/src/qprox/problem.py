"""Networked regularized regression problems.

A problem couples an undirected communication graph with per-node
quadratic losses ``f_i(x_N(i)) = ||H_i x_N(i) - h_i||^2`` over the
stacked states of the node's closed neighborhood, plus a separable
regularizer evaluated blockwise.  Everything downstream (solvers,
simulators, analysis) consumes the immutable :class:`ProblemInstance`
built here.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rng
from .errors import GenerationError, ParameterError


# ---------------------------------------------------------------------------
# graph

class Graph:
    """Undirected connected graph over ``node_count`` nodes.

    Neighborhoods are *closed*: every node is a member of its own
    neighbor set.  ``adjacency[i]`` is the sorted closed neighborhood of
    node ``i`` and ``max_degree`` is ``max_i |adjacency[i]|``.
    """

    def __init__(self, node_count: int, neighbors):
        """Build from open neighbor lists (self ids are added here).

        Parameters
        ----------
        node_count : int
            Number of nodes, labeled ``0 .. node_count - 1``.
        neighbors : sequence of iterables
            ``neighbors[i]`` lists the neighbors of node ``i`` without
            ``i`` itself.
        """
        if node_count < 1:
            raise ParameterError("node_count must be positive")
        if len(neighbors) != node_count:
            raise ParameterError("neighbor list length != node_count")
        adjacency = []
        for i, nbrs in enumerate(neighbors):
            closed = sorted(set(int(j) for j in nbrs) | {i})
            for j in closed:
                if not 0 <= j < node_count:
                    raise ParameterError(f"neighbor id {j} out of range")
            adjacency.append(tuple(closed))
        self.node_count = int(node_count)
        self.adjacency = tuple(adjacency)
        self.max_degree = max(len(a) for a in adjacency)
        self._validate()

    def _validate(self):
        for i, closed in enumerate(self.adjacency):
            for j in closed:
                if j != i and i not in self.adjacency[j]:
                    raise ParameterError(f"edge {i}-{j} is not symmetric")
        if not self.is_connected():
            raise ParameterError("graph is not connected")

    def neighborhood(self, i: int) -> tuple:
        """Sorted closed neighborhood of node ``i``."""
        return self.adjacency[i]

    def is_connected(self) -> bool:
        seen = {0}
        frontier = [0]
        while frontier:
            v = frontier.pop()
            for w in self.adjacency[v]:
                if w not in seen:
                    seen.add(w)
                    frontier.append(w)
        return len(seen) == self.node_count

    def __eq__(self, other):
        return (isinstance(other, Graph)
                and self.node_count == other.node_count
                and self.adjacency == other.adjacency)


def generate_regular_graph(N: int, d: int, seed: int,
                           max_retries: int = 10_000) -> Graph:
    """Random simple connected d-regular graph by stub pairing.

    Free stubs are paired one node at a time, drawing each partner
    uniformly among the nodes that still have stubs and would not
    create a self-loop or repeated edge.  An attempt that dead-ends or
    produces a disconnected graph is rejected wholesale and redrawn
    from the same stream, so the result is deterministic in ``seed``.

    Parameters
    ----------
    N, d : int
        Node count and uniform degree.  ``N * d`` must be even and
        ``d < N``.
    seed : int
        Stream seed; the same seed always yields the same graph.
    max_retries : int, optional
        Rejection budget before giving up.

    Returns
    -------
    Graph
        Every node ends up with exactly ``d`` neighbors, i.e. a closed
        neighborhood of size ``d + 1``.
    """
    if N < 2 or d < 1:
        raise ParameterError("need N >= 2 and d >= 1")
    if d >= N:
        raise ParameterError("degree must satisfy d < N")
    if (N * d) % 2 != 0:
        raise ParameterError("N*d must be even for a d-regular graph")

    gen = rng.stream(seed, "graph")
    for _ in range(max_retries):
        remaining = [d] * N
        edges = set()
        neighbors = [[] for _ in range(N)]
        failed = False
        while not failed:
            open_nodes = [u for u in range(N) if remaining[u] > 0]
            if not open_nodes:
                break
            u = open_nodes[0]
            partners = [v for v in open_nodes
                        if v != u and (u, v) not in edges]
            if not partners:
                failed = True
                break
            v = partners[int(gen.integers(len(partners)))]
            edges.add((u, v))
            edges.add((v, u))
            neighbors[u].append(v)
            neighbors[v].append(u)
            remaining[u] -= 1
            remaining[v] -= 1
        if failed:
            continue
        try:
            return Graph(N, neighbors)
        except ParameterError:
            continue
    raise GenerationError(f"no valid {d}-regular graph on {N} nodes "
                          f"after {max_retries} attempts")


# ---------------------------------------------------------------------------
# regularizers

_VARIANTS = ("l1", "squared_l2", "elastic_net", "group_lasso")


@dataclass(frozen=True)
class RegularizerSpec:
    """Separable regularizer: variant plus its weight(s).

    ``lam1`` is the l1 weight (or the single weight of one-parameter
    variants); ``lam2`` is the squared-l2 weight of the elastic net.
    """

    variant: str = "elastic_net"
    lam1: float = 0.0
    lam2: float = 0.0

    def __post_init__(self):
        if self.variant not in _VARIANTS:
            raise ParameterError(f"unknown regularizer variant {self.variant!r}")
        if self.lam1 < 0 or self.lam2 < 0:
            raise ParameterError("regularizer weights must be >= 0")


def regularizer_value(reg: RegularizerSpec, x: np.ndarray, blocks=None) -> float:
    """Evaluate R(x); ``blocks`` (slices) are required for group_lasso."""
    if reg.variant == "l1":
        return reg.lam1 * float(np.sum(np.abs(x)))
    if reg.variant == "squared_l2":
        return 0.5 * reg.lam1 * float(x @ x)
    if reg.variant == "elastic_net":
        return (reg.lam1 * float(np.sum(np.abs(x)))
                + 0.5 * reg.lam2 * float(x @ x))
    if blocks is None:
        raise ParameterError("group_lasso needs block slices")
    return reg.lam1 * float(sum(np.linalg.norm(x[b]) for b in blocks))


def prox_R(reg: RegularizerSpec, v: np.ndarray, eta: float, blocks=None) -> np.ndarray:
    """Proximal map of ``eta * R`` in closed form.

    Returns the exact minimizer of ``0.5 ||y - v||^2 + eta R(y)``:
    soft thresholding for l1, scalar shrinkage for squared l2, their
    composition for the elastic net, and per-block norm shrinkage for
    the group variant.

    Parameters
    ----------
    reg : RegularizerSpec
    v : ndarray
        Point to project; any shape, treated componentwise (blockwise
        for group_lasso).
    eta : float
        Positive step size scaling the regularizer.
    blocks : sequence of slices, optional
        Node blocks of ``v``; only group_lasso reads them.
    """
    if eta <= 0:
        raise ParameterError("prox step must be positive")
    v = np.asarray(v, dtype=float)
    if reg.variant == "l1":
        return np.sign(v) * np.maximum(np.abs(v) - eta * reg.lam1, 0.0)
    if reg.variant == "squared_l2":
        return v / (1.0 + eta * reg.lam1)
    if reg.variant == "elastic_net":
        shrunk = np.sign(v) * np.maximum(np.abs(v) - eta * reg.lam1, 0.0)
        return shrunk / (1.0 + eta * reg.lam2)
    if blocks is None:
        raise ParameterError("group_lasso needs block slices")
    out = np.empty_like(v)
    for b in blocks:
        norm = np.linalg.norm(v[b])
        scale = max(0.0, 1.0 - eta * reg.lam1 / norm) if norm > 0 else 0.0
        out[b] = scale * v[b]
    return out


# ---------------------------------------------------------------------------
# problem instance

@dataclass(frozen=True)
class SmoothnessReport:
    """Per-node gradient Lipschitz constants and the curvature floor.

    ``mu == 0`` means no strong convexity could be certified; linear
    convergence guarantees are void but runs are still permitted.
    """

    L_i: np.ndarray
    L_bar: float
    mu: float

    @property
    def strongly_convex(self) -> bool:
        return self.mu > 0


class ProblemInstance:
    """Immutable networked least-squares problem.

    Structure: graph, per-node block dimensions ``m_i``, per-node data
    ``(H_i, h_i)`` over the closed-neighborhood stack, a separable
    regularizer, and the generating vector ``x_gen`` kept for
    diagnostics.  All operations on an instance are pure functions.
    """

    def __init__(self, graph: Graph, m, H, h, regularizer: RegularizerSpec,
                 x_gen: np.ndarray):
        N = graph.node_count
        m = [int(v) for v in (m if np.ndim(m) else [m] * N)]
        if len(m) != N or any(v < 1 for v in m):
            raise ParameterError("block dims must be positive, one per node")
        offsets = np.concatenate([[0], np.cumsum(m)])
        P = int(offsets[-1])

        self.graph = graph
        self.m = tuple(m)
        self.offsets = offsets
        self.P = P
        self.regularizer = regularizer
        self.x_gen = np.asarray(x_gen, dtype=float).copy()
        if self.x_gen.shape != (P,):
            raise ParameterError("x_gen dimension != total state dimension")

        # stacked-neighborhood index map per node, ascending neighbor id
        self._nbhd_index = []
        self._block_pos = []
        for i in range(N):
            idx = np.concatenate([np.arange(offsets[j], offsets[j + 1])
                                  for j in graph.neighborhood(i)])
            self._nbhd_index.append(idx)
            pos, lo = {}, 0
            for j in graph.neighborhood(i):
                pos[j] = (lo, lo + m[j])
                lo += m[j]
            self._block_pos.append(pos)

        self.H = tuple(np.asarray(Hi, dtype=float).copy() for Hi in H)
        self.h = tuple(np.asarray(hi, dtype=float).copy() for hi in h)
        for i in range(N):
            want = len(self._nbhd_index[i])
            if self.H[i].ndim != 2 or self.H[i].shape[1] != want:
                raise ParameterError(
                    f"H[{i}] must have {want} columns for its neighborhood")
            if self.h[i].shape != (self.H[i].shape[0],):
                raise ParameterError(f"h[{i}] length != rows of H[{i}]")
        for Hi in self.H:
            Hi.flags.writeable = False
        for hi in self.h:
            hi.flags.writeable = False
        self.x_gen.flags.writeable = False

    # -- selectors ---------------------------------------------------------

    @property
    def N(self) -> int:
        return self.graph.node_count

    def block(self, i: int) -> slice:
        """Global slice of node ``i``'s variables."""
        return slice(int(self.offsets[i]), int(self.offsets[i + 1]))

    @property
    def blocks(self):
        return [self.block(i) for i in range(self.N)]

    def nbhd_dim(self, i: int) -> int:
        return len(self._nbhd_index[i])

    def nbhd_index(self, i: int) -> np.ndarray:
        return self._nbhd_index[i]

    def gather(self, x: np.ndarray, i: int) -> np.ndarray:
        """Stack ``x`` over the closed neighborhood of node ``i``."""
        if x.shape != (self.P,):
            raise ParameterError("global vector has wrong dimension")
        return x[self._nbhd_index[i]]

    def block_range(self, j: int, i: int):
        """Position of node ``i``'s block inside node ``j``'s stack."""
        try:
            return self._block_pos[j][i]
        except KeyError:
            raise KeyError(f"node {i} is not in the neighborhood of {j}") from None

    def scatter_block(self, g: np.ndarray, j: int, i: int) -> np.ndarray:
        """Extract node ``i``'s block from node ``j``'s stacked vector."""
        lo, hi = self.block_range(j, i)
        if g.shape != (self.nbhd_dim(j),):
            raise ParameterError("stacked vector has wrong dimension")
        return g[lo:hi]

    # -- losses and gradients ----------------------------------------------

    def local_residual(self, i: int, x_nbhd: np.ndarray) -> np.ndarray:
        if x_nbhd.shape != (self.nbhd_dim(i),):
            raise ParameterError(f"stacked vector for node {i} has wrong dim")
        return self.H[i] @ x_nbhd - self.h[i]

    def local_objective(self, i: int, x_nbhd: np.ndarray) -> float:
        r = self.local_residual(i, x_nbhd)
        return float(r @ r)

    def local_gradient(self, i: int, x_nbhd: np.ndarray) -> np.ndarray:
        """Gradient of the node loss on its stacked neighborhood.

        The loss is quadratic, so this is exactly affine in the input:
        ``2 H_i^T (H_i x - h_i)``.
        """
        return 2.0 * (self.H[i].T @ self.local_residual(i, x_nbhd))

    def lifted_gradient(self, i: int, x: np.ndarray) -> np.ndarray:
        """Node gradient embedded into the global coordinates."""
        out = np.zeros(self.P)
        out[self._nbhd_index[i]] = self.local_gradient(i, self.gather(x, i))
        return out

    def full_gradient(self, x: np.ndarray) -> np.ndarray:
        """Gradient of the averaged smooth term ``F``."""
        acc = np.zeros(self.P)
        for i in range(self.N):
            acc[self._nbhd_index[i]] += self.local_gradient(i, self.gather(x, i))
        acc /= self.N
        return acc

    def smooth_objective(self, x: np.ndarray) -> float:
        total = 0.0
        for i in range(self.N):
            total += self.local_objective(i, self.gather(x, i))
        return total / self.N

    def objective(self, x: np.ndarray) -> float:
        """Full composite objective ``G = F + R``."""
        return self.smooth_objective(x) + regularizer_value(
            self.regularizer, x, self.blocks)

    def prox(self, v: np.ndarray, eta: float) -> np.ndarray:
        return prox_R(self.regularizer, v, eta, self.blocks)

    # -- curvature ----------------------------------------------------------

    def aggregate_hessian(self) -> np.ndarray:
        """Hessian of ``F``: the averaged lifted node Hessians."""
        M = np.zeros((self.P, self.P))
        for i in range(self.N):
            idx = self._nbhd_index[i]
            M[np.ix_(idx, idx)] += 2.0 * (self.H[i].T @ self.H[i])
        M /= self.N
        return M

    def smoothness(self) -> SmoothnessReport:
        """Lipschitz constants of the node gradients and the mu of G.

        ``L_i = 2 sigma_max(H_i)^2`` for the quadratic losses.  The
        elastic net certifies ``mu = lam2`` directly; otherwise mu is
        the smallest eigenvalue of the aggregate Hessian, floored at 0.
        """
        L = np.array([2.0 * np.linalg.norm(Hi, 2) ** 2 for Hi in self.H])
        reg = self.regularizer
        if reg.variant == "elastic_net" and reg.lam2 > 0:
            mu = reg.lam2
        else:
            mu = max(float(np.linalg.eigvalsh(self.aggregate_hessian())[0]), 0.0)
        return SmoothnessReport(L_i=L, L_bar=float(L.max()), mu=float(mu))


def build_instance(graph: Graph, m, rows, regularizer: RegularizerSpec,
                   seed: int, x_scale: float = 0.1) -> ProblemInstance:
    """Instance over an explicit graph with synthetic Gaussian data.

    ``H_i`` entries are i.i.d. standard normal from per-node streams,
    one global ``x_gen ~ N(0, x_scale^2 I)`` is drawn once, and each
    ``h_i = H_i x_gen_N(i)`` so the generator attains zero loss.
    """
    N = graph.node_count
    m_list = [int(v) for v in (m if np.ndim(m) else [m] * N)]
    rows_list = [int(v) for v in (rows if np.ndim(rows) else [rows] * N)]
    if any(r < 1 for r in rows_list):
        raise ParameterError("rows must be >= 1")
    offsets = np.concatenate([[0], np.cumsum(m_list)])
    P = int(offsets[-1])
    x_gen = x_scale * rng.stream(seed, "xgen").standard_normal(P)
    H, h = [], []
    for i in range(N):
        dim = sum(m_list[j] for j in graph.neighborhood(i))
        Hi = rng.stream(seed, "matrix", i).standard_normal((rows_list[i], dim))
        idx = np.concatenate([np.arange(offsets[j], offsets[j + 1])
                              for j in graph.neighborhood(i)])
        H.append(Hi)
        h.append(Hi @ x_gen[idx])
    return ProblemInstance(graph, m_list, H, h, regularizer, x_gen)


def generate_instance(N: int, d: int, m: int, rows: int,
                      regularizer: RegularizerSpec, seed: int,
                      x_scale: float = 0.1) -> ProblemInstance:
    """Random d-regular instance; deterministic in ``seed``.

    The graph comes from :func:`generate_regular_graph` on a stream
    derived from the same seed, so one integer pins the whole instance.
    """
    graph = generate_regular_graph(N, d, seed)
    return build_instance(graph, m, rows, regularizer, seed, x_scale=x_scale)
