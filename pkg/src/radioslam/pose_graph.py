"""Pose-graph construction and sparse Levenberg-Marquardt optimization.

Nodes are SE(2) poses; edges couple them through three constraint kinds:
integrated odometry, scalar radio-distance loop closures, and LiDAR
relative-pose loop closures. The first node anchors the gauge and is excluded
from the state vector. Residuals, Jacobians, and the normal equations are
evaluated in vectorized batches per edge kind; the damped system is solved
with a sparse direct factorization each iteration.

Plain-text dump format (one record per line, whitespace separated):

    VERTEX_SE2 id x y theta
    FIX id
    EDGE_SE2 KIND i j dx dy dtheta i11 i12 i13 i22 i23 i33
    EDGE_RANGE i j z info

where KIND is ODOMETRY or LIDAR_REL_POSE and the six EDGE_SE2 information
entries are the upper triangle of the symmetric 3x3 information matrix,
row-major.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from enum import Enum

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import MatrixRankWarning, spsolve

from .geometry import Pose2D, normalize_angle

__all__ = [
    "EdgeKind",
    "Node",
    "Edge",
    "SolverConfig",
    "SolveStats",
    "PoseGraph",
    "residual",
    "linearize",
    "optimize",
    "dump_graph",
    "parse_graph",
]

# Below this node separation a radio-distance edge has no usable direction and
# is skipped for the current linearization.
MIN_RANGE_SEPARATION = 1e-6

_TWO_PI = 2.0 * math.pi


class EdgeKind(Enum):
    ODOMETRY = "ODOMETRY"
    RADIO_DISTANCE = "RADIO_DISTANCE"
    LIDAR_REL_POSE = "LIDAR_REL_POSE"


_REL_POSE_KINDS = (EdgeKind.ODOMETRY, EdgeKind.LIDAR_REL_POSE)
# Loop-closure kinds get the robust kernel by default; odometry does not.
_ROBUST_KINDS = (EdgeKind.RADIO_DISTANCE, EdgeKind.LIDAR_REL_POSE)


@dataclass
class Node:
    id: int
    pose: Pose2D
    fixed: bool = False


@dataclass
class Edge:
    """A measurement constraint between nodes i and j.

    For relative-pose kinds the measurement is a Pose2D and the information a
    symmetric positive-definite 3x3 matrix; for radio-distance edges the
    measurement is a scalar distance and the information a positive scalar.
    """

    kind: EdgeKind
    i: int
    j: int
    measurement: Pose2D | float
    information: np.ndarray | float


@dataclass
class SolverConfig:
    max_iterations: int = 100
    initial_lambda: float = 1e-4
    convergence_tol: float = 1e-8  # relative chi^2 change
    huber_delta: float | None = 1.0  # None disables the robust kernel

    def __post_init__(self) -> None:
        if self.max_iterations <= 0 or self.initial_lambda <= 0 or self.convergence_tol <= 0:
            raise ValueError("solver config values must be positive")
        if self.huber_delta is not None and self.huber_delta <= 0:
            raise ValueError("huber_delta must be positive or None")


@dataclass(frozen=True)
class SolveStats:
    iterations: int
    initial_chi2: float
    final_chi2: float
    accepted_steps: int
    converged: bool
    chi2_history: tuple[float, ...]


class PoseGraph:
    """Mutable container of nodes and edges; one solver run per instance."""

    def __init__(self) -> None:
        self.nodes: list[Node] = []
        self.edges: list[Edge] = []

    def add_node(self, pose: Pose2D, fixed: bool | None = None) -> int:
        nid = len(self.nodes)
        if fixed is None:
            fixed = nid == 0
        if fixed != (nid == 0):
            raise ValueError("exactly the first node must be fixed (gauge anchor)")
        self.nodes.append(Node(nid, pose, fixed))
        return nid

    def add_edge(
        self,
        kind: EdgeKind,
        i: int,
        j: int,
        measurement: Pose2D | float,
        information: np.ndarray | float,
    ) -> Edge:
        if i == j:
            raise ValueError(f"edge endpoints must differ, got {i}=={j}")
        for nid in (i, j):
            if not 0 <= nid < len(self.nodes):
                raise ValueError(f"edge references unknown node {nid}")
        if kind in _REL_POSE_KINDS:
            if not isinstance(measurement, Pose2D):
                raise ValueError(f"{kind.value} edge needs a Pose2D measurement")
            info = np.asarray(information, dtype=float)
            if info.shape != (3, 3):
                raise ValueError("relative-pose information must be 3x3")
            if not np.allclose(info, info.T, atol=1e-9):
                raise ValueError("information matrix must be symmetric")
            try:
                np.linalg.cholesky(info)
            except np.linalg.LinAlgError:
                raise ValueError("information matrix must be positive definite") from None
            edge = Edge(kind, i, j, measurement, info)
        elif kind is EdgeKind.RADIO_DISTANCE:
            z = float(measurement)
            w = float(information)
            if z < 0:
                raise ValueError("radio distance measurement must be nonnegative")
            if w <= 0:
                raise ValueError("scalar information must be positive")
            edge = Edge(kind, i, j, z, w)
        else:  # pragma: no cover - exhaustive enum
            raise ValueError(f"unknown edge kind {kind}")
        self.edges.append(edge)
        return edge


def _wrap(a: np.ndarray) -> np.ndarray:
    """Vectorized angle wrap to (-pi, pi]."""
    r = np.asarray(a) % _TWO_PI
    return np.where(r > math.pi, r - _TWO_PI, r)


def _rel_terms(z: np.ndarray, xi: np.ndarray, xj: np.ndarray, with_jacobians: bool):
    """Batched residuals (and Jacobians) of relative-pose edges.

    z, xi, xj: (m, 3) arrays. The residual is inv(Z) * inv(Xi) * Xj.
    """
    ci, si = np.cos(xi[:, 2]), np.sin(xi[:, 2])
    dx, dy = xj[:, 0] - xi[:, 0], xj[:, 1] - xi[:, 1]
    hx = ci * dx + si * dy
    hy = -si * dx + ci * dy
    cz, sz = np.cos(z[:, 2]), np.sin(z[:, 2])
    ax, ay = hx - z[:, 0], hy - z[:, 1]
    res = np.stack(
        [cz * ax + sz * ay, -sz * ax + cz * ay, _wrap(xj[:, 2] - xi[:, 2] - z[:, 2])],
        axis=1,
    )
    if not with_jacobians:
        return res, None, None
    m = len(res)
    # Rz^T @ Ri^T entries.
    r00 = cz * ci - sz * si
    r01 = cz * si + sz * ci
    r10 = -(sz * ci + cz * si)
    r11 = cz * ci - sz * si
    # Rz^T @ (dRi^T/dtheta_i @ dt)
    v0 = -si * dx + ci * dy
    v1 = -ci * dx - si * dy
    ja = np.zeros((m, 3, 3))
    jb = np.zeros((m, 3, 3))
    ja[:, 0, 0], ja[:, 0, 1] = -r00, -r01
    ja[:, 1, 0], ja[:, 1, 1] = -r10, -r11
    ja[:, 0, 2] = cz * v0 + sz * v1
    ja[:, 1, 2] = -sz * v0 + cz * v1
    ja[:, 2, 2] = -1.0
    jb[:, 0, 0], jb[:, 0, 1] = r00, r01
    jb[:, 1, 0], jb[:, 1, 1] = r10, r11
    jb[:, 2, 2] = 1.0
    return res, ja, jb


def _range_terms(z: np.ndarray, xi: np.ndarray, xj: np.ndarray, with_jacobians: bool):
    """Batched residuals (and Jacobians) of radio-distance edges.

    Jacobians of edges with node separation below MIN_RANGE_SEPARATION are
    zeroed and flagged invalid (skipped for the iteration).
    """
    ux = xi[:, 0] - xj[:, 0]
    uy = xi[:, 1] - xj[:, 1]
    d = np.hypot(ux, uy)
    res = z - d
    if not with_jacobians:
        return res, None, None, None
    valid = d > MIN_RANGE_SEPARATION
    safe = np.where(valid, d, 1.0)
    nx, ny = ux / safe, uy / safe
    m = len(res)
    ja = np.zeros((m, 1, 3))
    ja[:, 0, 0] = -nx
    ja[:, 0, 1] = -ny
    return res, ja, -ja, valid


def residual(edge: Edge, xi: Pose2D, xj: Pose2D) -> np.ndarray:
    """Measurement error of one edge given node poses (3-vector or 1-vector)."""
    ai, aj = xi.as_array()[None, :], xj.as_array()[None, :]
    if edge.kind in _REL_POSE_KINDS:
        z = edge.measurement.as_array()[None, :]
        res, _, _ = _rel_terms(z, ai, aj, with_jacobians=False)
        return res[0]
    res, _, _, _ = _range_terms(np.array([edge.measurement]), ai, aj, with_jacobians=False)
    return np.array([res[0]])


def linearize(edge: Edge, xi: Pose2D, xj: Pose2D) -> tuple[np.ndarray, np.ndarray]:
    """Analytic Jacobians of the edge residual w.r.t. xi and xj."""
    ai, aj = xi.as_array()[None, :], xj.as_array()[None, :]
    if edge.kind in _REL_POSE_KINDS:
        z = edge.measurement.as_array()[None, :]
        _, ja, jb = _rel_terms(z, ai, aj, with_jacobians=True)
        return ja[0], jb[0]
    _, ja, jb, valid = _range_terms(np.array([edge.measurement]), ai, aj, with_jacobians=True)
    if not valid[0]:
        raise ValueError("radio-distance edge with coincident nodes has no usable direction")
    return ja[0], jb[0]


def _robust_weights(q: np.ndarray, delta: float | None, robust_mask: np.ndarray):
    """IRLS weights and Huber costs given squared whitened errors q >= 0."""
    if delta is None:
        return np.ones_like(q), q
    s = np.sqrt(np.maximum(q, 0.0))
    heavy = robust_mask & (s > delta)
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(heavy, delta / np.where(s > 0, s, 1.0), 1.0)
    cost = np.where(heavy, 2.0 * delta * s - delta * delta, q)
    return w, cost


class _Batches:
    """Per-kind edge arrays plus precomputed scatter indices.

    State indices use an extended layout with one dummy slot at the end that
    absorbs fixed-node contributions; the dummy rows/columns are dropped when
    the sparse normal matrix is materialized.
    """

    def __init__(self, graph: PoseGraph, slots: dict[int, int], m: int):
        self.m = m
        dummy = m
        ext = np.array(
            [slots.get(node.id, dummy) for node in graph.nodes], dtype=np.int64
        )

        rel = [e for e in graph.edges if e.kind in _REL_POSE_KINDS]
        self.rel_i = np.array([e.i for e in rel], dtype=np.int64)
        self.rel_j = np.array([e.j for e in rel], dtype=np.int64)
        self.rel_z = (
            np.array([[e.measurement.x, e.measurement.y, e.measurement.theta] for e in rel])
            if rel
            else np.zeros((0, 3))
        )
        self.rel_info = (
            np.stack([e.information for e in rel]) if rel else np.zeros((0, 3, 3))
        )
        self.rel_robust = np.array([e.kind in _ROBUST_KINDS for e in rel], dtype=bool)

        rng = [e for e in graph.edges if e.kind is EdgeKind.RADIO_DISTANCE]
        self.rng_i = np.array([e.i for e in rng], dtype=np.int64)
        self.rng_j = np.array([e.j for e in rng], dtype=np.int64)
        self.rng_z = np.array([e.measurement for e in rng], dtype=float)
        self.rng_w = np.array([e.information for e in rng], dtype=float)

        def idx6(i_arr, j_arr):
            si = ext[i_arr]
            sj = ext[j_arr]
            out = np.empty((len(i_arr), 6), dtype=np.int64)
            for k in range(3):
                out[:, k] = 3 * si + k
                out[:, 3 + k] = 3 * sj + k
            return out

        self.rel_idx6 = idx6(self.rel_i, self.rel_j) if rel else np.zeros((0, 6), dtype=np.int64)
        self.rng_idx6 = idx6(self.rng_i, self.rng_j) if rng else np.zeros((0, 6), dtype=np.int64)
        self.rel_rows = np.repeat(self.rel_idx6, 6, axis=1).ravel()
        self.rel_cols = np.tile(self.rel_idx6, (1, 6)).ravel()
        self.rng_rows = np.repeat(self.rng_idx6, 6, axis=1).ravel()
        self.rng_cols = np.tile(self.rng_idx6, (1, 6)).ravel()

    def chi2(self, poses: np.ndarray, config: SolverConfig) -> float:
        total = 0.0
        if len(self.rel_i):
            res, _, _ = _rel_terms(
                self.rel_z, poses[self.rel_i], poses[self.rel_j], with_jacobians=False
            )
            q = np.einsum("ni,nij,nj->n", res, self.rel_info, res)
            _, cost = _robust_weights(q, config.huber_delta, self.rel_robust)
            total += float(cost.sum())
        if len(self.rng_i):
            res, _, _, _ = _range_terms(
                self.rng_z, poses[self.rng_i], poses[self.rng_j], with_jacobians=False
            )
            q = self.rng_w * res**2
            _, cost = _robust_weights(
                q, config.huber_delta, np.ones(len(q), dtype=bool)
            )
            total += float(cost.sum())
        return total

    def assemble(self, poses: np.ndarray, config: SolverConfig):
        n_ext = 3 * (self.m + 1)
        b_ext = np.zeros(n_ext)
        rows_parts = []
        cols_parts = []
        vals_parts = []
        if len(self.rel_i):
            res, ja, jb = _rel_terms(
                self.rel_z, poses[self.rel_i], poses[self.rel_j], with_jacobians=True
            )
            q = np.einsum("ni,nij,nj->n", res, self.rel_info, res)
            w, _ = _robust_weights(q, config.huber_delta, self.rel_robust)
            omega = self.rel_info * w[:, None, None]
            j6 = np.concatenate([ja, jb], axis=2)  # (m, 3, 6)
            h6 = np.einsum("nki,nkl,nlj->nij", j6, omega, j6)
            b6 = np.einsum("nki,nkl,nl->ni", j6, omega, res)
            rows_parts.append(self.rel_rows)
            cols_parts.append(self.rel_cols)
            vals_parts.append(h6.reshape(-1))
            np.add.at(b_ext, self.rel_idx6.ravel(), b6.ravel())
        if len(self.rng_i):
            res, ja, jb, valid = _range_terms(
                self.rng_z, poses[self.rng_i], poses[self.rng_j], with_jacobians=True
            )
            q = self.rng_w * res**2
            w, _ = _robust_weights(q, config.huber_delta, np.ones(len(q), dtype=bool))
            g = self.rng_w * w * valid  # invalid (coincident) edges drop out
            j6 = np.concatenate([ja, jb], axis=2)[:, 0, :]  # (k, 6)
            h6 = g[:, None, None] * np.einsum("ni,nj->nij", j6, j6)
            b6 = (g * res)[:, None] * j6
            rows_parts.append(self.rng_rows)
            cols_parts.append(self.rng_cols)
            vals_parts.append(h6.reshape(-1))
            np.add.at(b_ext, self.rng_idx6.ravel(), b6.ravel())
        h_ext = sp.coo_matrix(
            (np.concatenate(vals_parts), (np.concatenate(rows_parts), np.concatenate(cols_parts))),
            shape=(n_ext, n_ext),
        ).tocsr()
        n = 3 * self.m
        return h_ext[:n, :n], b_ext[:n]


def _check_connected(graph: PoseGraph) -> None:
    n = len(graph.nodes)
    adj: list[list[int]] = [[] for _ in range(n)]
    for e in graph.edges:
        adj[e.i].append(e.j)
        adj[e.j].append(e.i)
    seen = [False] * n
    stack = [0]
    seen[0] = True
    while stack:
        k = stack.pop()
        for nb in adj[k]:
            if not seen[nb]:
                seen[nb] = True
                stack.append(nb)
    unreachable = [k for k, s in enumerate(seen) if not s]
    if unreachable:
        raise ValueError(
            f"graph disconnected: nodes unreachable from fixed node 0: {unreachable}"
        )


def _solve_damped(h: sp.csr_matrix, b: np.ndarray, lam: float) -> np.ndarray:
    a = (h + lam * sp.identity(h.shape[0], format="csr")).tocsc()
    with warnings.catch_warnings():
        warnings.simplefilter("error", MatrixRankWarning)
        try:
            dx = spsolve(a, -b)
        except MatrixRankWarning:
            raise ValueError("normal matrix is not positive definite after damping") from None
    dx = np.atleast_1d(np.asarray(dx, dtype=float))
    if not np.isfinite(dx).all():
        raise ValueError("normal matrix is not positive definite after damping")
    return dx


def _apply_step(poses: np.ndarray, dx: np.ndarray, free_ids: np.ndarray) -> np.ndarray:
    out = poses.copy()
    steps = dx.reshape(-1, 3)
    out[free_ids, 0] += steps[:, 0]
    out[free_ids, 1] += steps[:, 1]
    out[free_ids, 2] = _wrap(out[free_ids, 2] + steps[:, 2])
    return out


def optimize(graph: PoseGraph, config: SolverConfig | None = None) -> tuple[list[Pose2D], SolveStats]:
    """Levenberg-Marquardt over the graph; returns optimized poses and stats.

    The damping factor halves on accepted steps and quadruples on rejected
    ones; chi^2 never increases across accepted steps. Node poses in the graph
    are updated in place as well.
    """
    if config is None:
        config = SolverConfig()
    if not graph.nodes:
        raise ValueError("graph has no nodes")
    if not graph.edges:
        raise ValueError("graph has no edges")
    if not graph.nodes[0].fixed:
        raise ValueError("first node must be fixed")
    _check_connected(graph)

    free_nodes = [n for n in graph.nodes if not n.fixed]
    slots = {node.id: k for k, node in enumerate(free_nodes)}
    free_ids = np.array([n.id for n in free_nodes], dtype=np.int64)
    m = len(slots)
    poses = np.array([[n.pose.x, n.pose.y, n.pose.theta] for n in graph.nodes])
    batches = _Batches(graph, slots, m)

    chi2 = batches.chi2(poses, config)
    history = [chi2]
    initial_chi2 = chi2
    lam = config.initial_lambda
    accepted = 0
    converged = chi2 == 0.0
    iterations = 0

    while not converged and iterations < config.max_iterations:
        iterations += 1
        h, b = batches.assemble(poses, config)
        stalled = False
        while True:
            dx = _solve_damped(h, b, lam)
            candidate = _apply_step(poses, dx, free_ids)
            chi2_new = batches.chi2(candidate, config)
            if chi2_new <= chi2:
                break
            lam *= 4.0
            if lam > 1e14:
                stalled = True
                break
        if stalled:
            break
        rel_change = (chi2 - chi2_new) / max(chi2, 1e-300)
        poses = candidate
        chi2 = chi2_new
        history.append(chi2)
        accepted += 1
        lam = max(lam * 0.5, 1e-15)
        if rel_change < config.convergence_tol:
            converged = True

    result = []
    for node in graph.nodes:
        pose = Pose2D(float(poses[node.id, 0]), float(poses[node.id, 1]), float(poses[node.id, 2]))
        node.pose = pose
        result.append(pose)
    stats = SolveStats(
        iterations=iterations,
        initial_chi2=initial_chi2,
        final_chi2=chi2,
        accepted_steps=accepted,
        converged=converged,
        chi2_history=tuple(history),
    )
    return result, stats


def dump_graph(graph: PoseGraph) -> str:
    """Serialize nodes and edges in the plain-text format documented above."""
    lines = []
    for node in graph.nodes:
        lines.append(f"VERTEX_SE2 {node.id} {node.pose.x!r} {node.pose.y!r} {node.pose.theta!r}")
    for node in graph.nodes:
        if node.fixed:
            lines.append(f"FIX {node.id}")
    for e in graph.edges:
        if e.kind in _REL_POSE_KINDS:
            z = e.measurement
            info = e.information
            upper = [info[0, 0], info[0, 1], info[0, 2], info[1, 1], info[1, 2], info[2, 2]]
            vals = " ".join(repr(float(v)) for v in upper)
            lines.append(f"EDGE_SE2 {e.kind.value} {e.i} {e.j} {z.x!r} {z.y!r} {z.theta!r} {vals}")
        else:
            lines.append(f"EDGE_RANGE {e.i} {e.j} {float(e.measurement)!r} {float(e.information)!r}")
    return "\n".join(lines) + "\n"


def parse_graph(text: str) -> PoseGraph:
    """Parse the dump format back into a graph (for tests and debugging)."""
    graph = PoseGraph()
    pending_edges = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        tag = parts[0]
        try:
            if tag == "VERTEX_SE2":
                nid = int(parts[1])
                if nid != len(graph.nodes):
                    raise ValueError("vertex ids must be consecutive from 0")
                graph.add_node(Pose2D(float(parts[2]), float(parts[3]), float(parts[4])))
            elif tag == "FIX":
                if int(parts[1]) != 0:
                    raise ValueError("only node 0 may be fixed")
            elif tag == "EDGE_SE2":
                kind = EdgeKind(parts[1])
                i, j = int(parts[2]), int(parts[3])
                z = Pose2D(float(parts[4]), float(parts[5]), float(parts[6]))
                u = [float(v) for v in parts[7:13]]
                info = np.array(
                    [[u[0], u[1], u[2]], [u[1], u[3], u[4]], [u[2], u[4], u[5]]]
                )
                pending_edges.append((kind, i, j, z, info))
            elif tag == "EDGE_RANGE":
                pending_edges.append(
                    (EdgeKind.RADIO_DISTANCE, int(parts[1]), int(parts[2]), float(parts[3]), float(parts[4]))
                )
            else:
                raise ValueError(f"unknown record tag {tag!r}")
        except (IndexError, ValueError) as exc:
            raise ValueError(f"graph dump line {lineno}: {exc}") from None
    for kind, i, j, z, info in pending_edges:
        graph.add_edge(kind, i, j, z, info)
    return graph
