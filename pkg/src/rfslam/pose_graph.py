"""SE(2) pose graph: geometry, analytic linearization, Levenberg-Marquardt.

Poses are planar (x, y, theta) with theta kept in (-pi, pi]. The graph couples
node poses through relative-pose constraints weighted by diagonal covariances;
``optimize`` iterates damped Gauss-Newton steps on the stacked constraint
errors, accepting a step only when the weighted squared error improves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

TWO_PI = 2.0 * math.pi

ODOMETRY = "odometry"
LOOP = "loop"
ANCHOR = "anchor"
EDGE_KINDS = (ODOMETRY, LOOP, ANCHOR)


class GraphStructureError(ValueError):
    """The graph cannot be optimized as posed (gauge, connectivity, or indexing)."""


def wrap_angle(theta: float) -> float:
    """Map an angle to (-pi, pi]. In-range values pass through unchanged."""
    if -math.pi < theta <= math.pi:
        return theta
    w = (theta + math.pi) % TWO_PI - math.pi
    if w <= -math.pi:
        w += TWO_PI
    return w


def wrap_angles(arr: np.ndarray) -> np.ndarray:
    """Vectorized :func:`wrap_angle`; in-range entries are left bit-identical."""
    out = np.array(arr, dtype=float, copy=True)
    mask = (out <= -math.pi) | (out > math.pi)
    if np.any(mask):
        w = (out[mask] + math.pi) % TWO_PI - math.pi
        w[w <= -math.pi] += TWO_PI
        out[mask] = w
    return out


@dataclass(frozen=True)
class Pose2:
    """Planar rigid-body pose: translation in meters, heading in radians."""

    x: float
    y: float
    theta: float

    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])


IDENTITY = Pose2(0.0, 0.0, 0.0)


def compose(a: Pose2, b: Pose2) -> Pose2:
    """Rigid-body composition a (+) b: apply b expressed in a's frame."""
    c, s = math.cos(a.theta), math.sin(a.theta)
    return Pose2(
        a.x + c * b.x - s * b.y,
        a.y + s * b.x + c * b.y,
        wrap_angle(a.theta + b.theta),
    )


def invert(a: Pose2) -> Pose2:
    """Group inverse: compose(a, invert(a)) is the identity."""
    c, s = math.cos(a.theta), math.sin(a.theta)
    return Pose2(-(c * a.x + s * a.y), -(-s * a.x + c * a.y), wrap_angle(-a.theta))


def relative(a: Pose2, b: Pose2) -> Pose2:
    """Pose of b expressed in a's frame: invert(a) (+) b."""
    c, s = math.cos(a.theta), math.sin(a.theta)
    dx, dy = b.x - a.x, b.y - a.y
    return Pose2(c * dx + s * dy, -s * dx + c * dy, wrap_angle(b.theta - a.theta))


@dataclass(frozen=True)
class Edge:
    """Relative-pose constraint between nodes i and j.

    ``z`` is the measured transform of j in i's frame; ``cov`` is the diagonal
    of the measurement covariance (m^2, m^2, rad^2).
    """

    i: int
    j: int
    kind: str
    z: Pose2
    cov: tuple

    def __post_init__(self):
        if self.i == self.j:
            raise ValueError(f"edge endpoints must differ, got {self.i}->{self.j}")
        if self.kind not in EDGE_KINDS:
            raise ValueError(f"unknown edge kind {self.kind!r}")
        cov = tuple(float(v) for v in self.cov)
        if len(cov) != 3 or any(v <= 0.0 or not math.isfinite(v) for v in cov):
            raise ValueError(f"covariance diagonal must be strictly positive, got {cov}")
        object.__setattr__(self, "cov", cov)


@dataclass
class PoseGraph:
    """Node pose estimates, constraints, and the fixed (gauge) node set."""

    nodes: list
    edges: list
    fixed: set = field(default_factory=set)

    def validate(self) -> None:
        n = len(self.nodes)
        if n == 0:
            raise GraphStructureError("graph has no nodes")
        for e in self.edges:
            if not (0 <= e.i < n and 0 <= e.j < n):
                raise GraphStructureError(f"edge {e.i}->{e.j} references a missing node")
        if not self.fixed:
            raise GraphStructureError("at least one node must be fixed to pin the gauge")
        for k in self.fixed:
            if not (0 <= k < n):
                raise GraphStructureError(f"fixed node {k} does not exist")
        # Every node must reach a fixed node through some chain of edges,
        # otherwise the damped normal equations have a free subspace.
        adj: list[list[int]] = [[] for _ in range(n)]
        for e in self.edges:
            adj[e.i].append(e.j)
            adj[e.j].append(e.i)
        seen = [False] * n
        stack = list(self.fixed)
        for k in stack:
            seen[k] = True
        while stack:
            u = stack.pop()
            for v in adj[u]:
                if not seen[v]:
                    seen[v] = True
                    stack.append(v)
        if not all(seen):
            bad = seen.index(False)
            raise GraphStructureError(
                f"node {bad} is not connected to any fixed node; the system is singular"
            )


def edge_error(e: Edge, xi: Pose2, xj: Pose2) -> np.ndarray:
    """Constraint error (dx, dy, dtheta): measurement minus prediction, in the
    measurement frame, with dtheta wrapped to (-pi, pi]."""
    pred = relative(xi, xj)
    cz, sz = math.cos(e.z.theta), math.sin(e.z.theta)
    rx, ry = pred.x - e.z.x, pred.y - e.z.y
    return np.array(
        [cz * rx + sz * ry, -sz * rx + cz * ry, wrap_angle(pred.theta - e.z.theta)]
    )


def linearize(e: Edge, xi: Pose2, xj: Pose2):
    """Edge error plus analytic Jacobians with respect to xi and xj."""
    err = edge_error(e, xi, xj)
    ci, si = math.cos(xi.theta), math.sin(xi.theta)
    cz, sz = math.cos(e.z.theta), math.sin(e.z.theta)
    ux, uy = xj.x - xi.x, xj.y - xi.y
    # d(Ri^T u)/dtheta_i, then rotated into the measurement frame
    vx = -si * ux + ci * uy
    vy = -ci * ux - si * uy
    wx = cz * vx + sz * vy
    wy = -sz * vx + cz * vy
    ang = xi.theta + e.z.theta
    ca, sa = math.cos(ang), math.sin(ang)
    ji = np.array([[-ca, -sa, wx], [sa, -ca, wy], [0.0, 0.0, -1.0]])
    jj = np.array([[ca, sa, 0.0], [-sa, ca, 0.0], [0.0, 0.0, 1.0]])
    return err, ji, jj


# ---------------------------------------------------------------------------
# Vectorized internals shared by chi2 and the optimizer.


def _graph_arrays(g: PoseGraph):
    poses = np.array([[p.x, p.y, p.theta] for p in g.nodes], dtype=float)
    if g.edges:
        fi = np.array([e.i for e in g.edges], dtype=np.intp)
        ti = np.array([e.j for e in g.edges], dtype=np.intp)
        z = np.array([[e.z.x, e.z.y, e.z.theta] for e in g.edges], dtype=float)
        w = np.array([[1.0 / v for v in e.cov] for e in g.edges], dtype=float)
    else:
        fi = np.zeros(0, dtype=np.intp)
        ti = np.zeros(0, dtype=np.intp)
        z = np.zeros((0, 3))
        w = np.zeros((0, 3))
    return poses, fi, ti, z, w


def _edge_errors(poses, fi, ti, z):
    # Mirrors edge_error() operation-for-operation so that a satisfied
    # constraint evaluates to an exact zero here as well.
    pi = poses[fi]
    pj = poses[ti]
    dx = pj[:, 0] - pi[:, 0]
    dy = pj[:, 1] - pi[:, 1]
    ci = np.cos(pi[:, 2])
    si = np.sin(pi[:, 2])
    px = ci * dx + si * dy
    py = -si * dx + ci * dy
    pth = wrap_angles(pj[:, 2] - pi[:, 2])
    cz = np.cos(z[:, 2])
    sz = np.sin(z[:, 2])
    rx = px - z[:, 0]
    ry = py - z[:, 1]
    ex = cz * rx + sz * ry
    ey = -sz * rx + cz * ry
    eth = wrap_angles(pth - z[:, 2])
    return np.stack([ex, ey, eth], axis=1)


def _chi2(poses, fi, ti, z, w) -> float:
    if len(fi) == 0:
        return 0.0
    err = _edge_errors(poses, fi, ti, z)
    return float(np.sum(w * err * err))


def chi2(g: PoseGraph) -> float:
    """Weighted squared constraint error summed over all edges."""
    return _chi2(*_graph_arrays(g))


def _linearize_all(poses, fi, ti, z):
    err = _edge_errors(poses, fi, ti, z)
    pi = poses[fi]
    pj = poses[ti]
    ci = np.cos(pi[:, 2])
    si = np.sin(pi[:, 2])
    cz = np.cos(z[:, 2])
    sz = np.sin(z[:, 2])
    ux = pj[:, 0] - pi[:, 0]
    uy = pj[:, 1] - pi[:, 1]
    vx = -si * ux + ci * uy
    vy = -ci * ux - si * uy
    wx = cz * vx + sz * vy
    wy = -sz * vx + cz * vy
    ang = pi[:, 2] + z[:, 2]
    ca = np.cos(ang)
    sa = np.sin(ang)
    m = len(fi)
    ji = np.zeros((m, 3, 3))
    jj = np.zeros((m, 3, 3))
    ji[:, 0, 0] = -ca
    ji[:, 0, 1] = -sa
    ji[:, 1, 0] = sa
    ji[:, 1, 1] = -ca
    ji[:, 0, 2] = wx
    ji[:, 1, 2] = wy
    ji[:, 2, 2] = -1.0
    jj[:, 0, 0] = ca
    jj[:, 0, 1] = sa
    jj[:, 1, 0] = -sa
    jj[:, 1, 1] = ca
    jj[:, 2, 2] = 1.0
    return err, ji, jj


def _normal_equations(poses, fi, ti, z, w):
    """Assemble the full Gauss-Newton system H, b over all 3N variables."""
    n = len(poses)
    err, ji, jj = _linearize_all(poses, fi, ti, z)
    wji = w[:, :, None] * ji
    wjj = w[:, :, None] * jj
    h_ii = np.einsum("eki,ekj->eij", ji, wji)
    h_ij = np.einsum("eki,ekj->eij", ji, wjj)
    h_jj = np.einsum("eki,ekj->eij", jj, wjj)
    h_ji = h_ij.transpose(0, 2, 1)
    werr = w * err
    b_i = np.einsum("eki,ek->ei", ji, werr)
    b_j = np.einsum("eki,ek->ei", jj, werr)

    offs = np.arange(3, dtype=np.intp)

    def block(rows_of, cols_of):
        shape = (len(rows_of), 3, 3)
        r = np.broadcast_to((3 * rows_of)[:, None, None] + offs[None, :, None], shape)
        c = np.broadcast_to((3 * cols_of)[:, None, None] + offs[None, None, :], shape)
        return r.ravel(), c.ravel()

    rows = []
    cols = []
    data = []
    for blk, (a, bidx) in zip((h_ii, h_ij, h_ji, h_jj), ((fi, fi), (fi, ti), (ti, fi), (ti, ti))):
        r, c = block(a, bidx)
        rows.append(r)
        cols.append(c)
        data.append(blk.ravel())
    h = sp.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(3 * n, 3 * n),
    ).tocsr()
    b = np.zeros((n, 3))
    np.add.at(b, fi, b_i)
    np.add.at(b, ti, b_j)
    return h, b.ravel()


@dataclass(frozen=True)
class OptimizeOptions:
    max_iters: int = 100
    lambda_init: float = 1e-4
    lambda_scale: float = 10.0
    convergence_tol: float = 1e-6


@dataclass
class OptimizeReport:
    iterations: int
    chi2_sequence: list
    converged: bool
    final_lambda: float

    @property
    def chi2_initial(self) -> float:
        return self.chi2_sequence[0]

    @property
    def chi2_final(self) -> float:
        return self.chi2_sequence[-1]


_LAMBDA_GIVEUP = 1e15


def optimize(g: PoseGraph, opts: OptimizeOptions = OptimizeOptions()):
    """Levenberg-Marquardt over the free node poses.

    Solves (H + lambda I) dx = -b each iteration through a sparse LU
    factorization; lambda shrinks by ``lambda_scale`` after an accepted step
    and grows (with the step rejected) otherwise. Fixed nodes are excluded
    from the variable set and returned bit-identical.

    Returns the optimized graph (input unmodified) and an
    :class:`OptimizeReport` whose chi2 sequence covers the accepted steps,
    starting at the initial value.
    """
    g.validate()
    poses, fi, ti, z, w = _graph_arrays(g)
    n = len(g.nodes)
    free = np.array(sorted(set(range(n)) - set(g.fixed)), dtype=np.intp)

    chi2_cur = _chi2(poses, fi, ti, z, w)
    seq = [chi2_cur]
    lam = opts.lambda_init
    converged = False
    iterations = 0

    if len(free) == 0:
        out = PoseGraph(nodes=list(g.nodes), edges=list(g.edges), fixed=set(g.fixed))
        return out, OptimizeReport(0, seq, True, lam)

    var_idx = (3 * free[:, None] + np.arange(3, dtype=np.intp)[None, :]).ravel()
    identity = sp.identity(len(var_idx), format="csr")
    h_ff = None
    b_f = None

    for _ in range(opts.max_iters):
        iterations += 1
        if h_ff is None:
            h, b = _normal_equations(poses, fi, ti, z, w)
            h_ff = h[var_idx][:, var_idx]
            b_f = b[var_idx]
        try:
            lu = splu((h_ff + lam * identity).tocsc())
            dx = lu.solve(-b_f)
        except RuntimeError as exc:
            raise GraphStructureError(f"normal equations could not be factorized: {exc}")
        if not np.all(np.isfinite(dx)):
            raise GraphStructureError("normal equations produced a non-finite step")

        trial = poses.copy()
        trial[free] += dx.reshape(-1, 3)
        trial[free, 2] = wrap_angles(trial[free, 2])
        chi2_new = _chi2(trial, fi, ti, z, w)

        # The absolute floor terminates zero-residual problems, where chi2
        # decays geometrically and the relative test alone never fires.
        small = abs(chi2_new - chi2_cur) <= opts.convergence_tol * chi2_cur + 1e-18
        if chi2_new < chi2_cur:
            poses = trial
            seq.append(chi2_new)
            chi2_cur = chi2_new
            lam /= opts.lambda_scale
            h_ff = None
            if small:
                converged = True
                break
        else:
            lam *= opts.lambda_scale
            if small or lam > _LAMBDA_GIVEUP:
                # No step can improve the objective any further.
                converged = True
                break

    out_nodes = [Pose2(float(r[0]), float(r[1]), float(r[2])) for r in poses]
    out = PoseGraph(nodes=out_nodes, edges=list(g.edges), fixed=set(g.fixed))
    return out, OptimizeReport(iterations, seq, converged, lam)
