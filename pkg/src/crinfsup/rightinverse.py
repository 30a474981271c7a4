"""Constructive pieces of a divergence right inverse for Crouzeix-Raviart
velocities.

The module builds modified non-conforming bubbles (edge bubbles for odd
degree, triangle bubbles for even degree), the alternating pressure
functionals at nearly critical vertices, the tridiagonal fan systems that
cancel those functionals, the Bernardi-Raugel mean correction, local vertex
fields and the step that attaches triangles to an already stable subset.

Polynomial extensions from prescribed traces are computed as discrete
minimal-energy fills of the interior coefficients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.linalg as sla

from .assembly import element_dubiner_stiffness, quadrature_degree
from .errors import (
    ConstraintInfeasible,
    FanSingular,
    NumericalError,
    ParityMismatch,
    PreconditionViolated,
    SingularInteriorSolve,
    UnderdeterminedMeans,
    ValidationError,
)
from .femspace import (
    PiecewiseField,
    _node_key,
    _tables,
    barycentric_ref,
    binom2,
    build_dofmap,
    dubiner_dim,
    dubiner_eval,
    edge_bubble_reference,
    geometry,
    lagrange_reference,
    outer_normal,
    pressure_field,
    project_reference,
    triangle_bubble_reference,
)
from .mesh import DEFAULT_ETA, Fan, TopologyReport, Triangulation, classify_critical, fan_decomposition
from .orthopoly import gauss_legendre, legendre_table, phi_tilde_poly

REF_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
FAN_DET_TOL = 1e-12
MEAN_TOL = 1e-10
MEMBERSHIP_RTOL = 1e-9


# ---------------------------------------------------------------------------
# Local operators and the constrained minimal-energy solver
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LocalOperators:
    """Dubiner-basis operators on one physical triangle.

    ``stiffness`` is the gradient Gram matrix, ``vertex_grad[p, i]`` the
    physical gradient of basis function ``p`` at local vertex ``i`` and
    ``mean_grad[p]`` the integral of its gradient over the triangle.
    """

    stiffness: np.ndarray
    vertex_grad: np.ndarray
    mean_grad: np.ndarray


def local_operators(mesh: Triangulation, K: int, degree: int) -> LocalOperators:
    qdeg = quadrature_degree(degree)
    rule, _, grads = _tables(degree, qdeg)
    geo = geometry(mesh)
    _, vg = dubiner_eval(degree, REF_VERTICES)
    g = geo.grad_to_physical(K, grads)
    mean = 2.0 * geo.area[K] * np.einsum("pqd,q->pd", g, rule.weights)
    return LocalOperators(
        element_dubiner_stiffness(mesh, K, degree, qdeg),
        geo.grad_to_physical(K, vg),
        mean,
    )


@dataclass(frozen=True)
class ConstrainedSolution:
    """Minimiser ``x`` of ``x^T A x`` under ``C x = d``."""

    x: np.ndarray
    energy: float
    residual: float
    nullity: int


def minimal_energy(A, C, d, tol: float = 1e-8, infeasible=ConstraintInfeasible, singular=ConstraintInfeasible) -> ConstrainedSolution:
    """Minimise the quadratic form of ``A`` over the affine set ``C x = d``.

    The constraint set is parametrised through the singular value
    decomposition of ``C``; redundant constraints are allowed as long as
    they are consistent. ``infeasible`` is raised when the constraints
    cannot be met to relative accuracy ``tol`` and ``singular`` when ``A``
    is not positive definite on the null space of ``C``.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    C = np.asarray(C, dtype=float).reshape(-1, n)
    d = np.asarray(d, dtype=float).ravel()
    if C.shape[0] == 0:
        x_p, N = np.zeros(n), np.eye(n)
    else:
        U, s, Vt = np.linalg.svd(C, full_matrices=True)
        rank = int(np.sum(s > 1e-12 * s[0])) if s.size and s[0] > 0 else 0
        x_p = Vt[:rank].T @ ((U[:, :rank].T @ d) / s[:rank])
        N = Vt[rank:].T
        resid = float(np.linalg.norm(C @ x_p - d))
        if resid > tol * max(float(np.linalg.norm(d)), np.finfo(float).tiny):
            raise infeasible(f"constraints cannot be met (residual {resid:.3e})")
    x = x_p
    if N.shape[1]:
        H = N.T @ A @ N
        try:
            y = sla.cho_solve(sla.cho_factor(0.5 * (H + H.T), lower=True), -(N.T @ (A @ x_p)))
        except np.linalg.LinAlgError as exc:
            raise singular("energy is not positive definite on the constraint null space") from exc
        x = x_p + N @ y
    res = float(np.linalg.norm(C @ x - d)) / max(float(np.linalg.norm(d)), 1.0) if C.shape[0] else 0.0
    return ConstrainedSolution(x, float(x @ A @ x), res, int(N.shape[1]))


def _boundary_samples(npts: int):
    """Reference points on the three edges; edge ``m`` is opposite corner ``m``.

    Returns a list of ``(m, t, points)`` with ``t`` in (0, 1) running from the
    lower to the higher of the other two local corners.
    """
    s, _ = gauss_legendre(npts)
    t = (1 + s) / 2
    out = []
    for m in range(3):
        a, b = [i for i in range(3) if i != m]
        pts = (1 - t)[:, None] * REF_VERTICES[a] + t[:, None] * REF_VERTICES[b]
        out.append((m, t, pts))
    return out


def _fill_from_traces(mesh: Triangulation, K: int, degree: int, target) -> np.ndarray:
    """Dubiner coefficients on ``K`` with prescribed boundary trace and least energy.

    ``target(m, t, pts)`` returns the trace values on local edge ``m`` at the
    parameters ``t`` (reference points ``pts``).
    """
    rows, rhs = [], []
    for m, t, pts in _boundary_samples(degree + 2):
        vals, _ = dubiner_eval(degree, pts)
        rows.append(vals.T)
        rhs.append(np.asarray(target(m, t, pts), dtype=float))
    C = np.vstack(rows)
    d = np.concatenate(rhs)
    ops = local_operators(mesh, K, degree)
    sol = minimal_energy(ops.stiffness, C, d, tol=1e-9, infeasible=SingularInteriorSolve, singular=SingularInteriorSolve)
    expected = (degree - 1) * (degree - 2) // 2
    if sol.nullity != expected:
        raise SingularInteriorSolve(f"interior space of triangle {K} has dimension {sol.nullity}, expected {expected}")
    return sol.x


@lru_cache(maxsize=None)
def _quartic_edge_bubble(i: int, j: int, degree: int) -> np.ndarray:
    """Dubiner coefficients of lambda_i^2 lambda_j^2 on the reference triangle."""
    return project_reference(lambda p: barycentric_ref(p)[i] ** 2 * barycentric_ref(p)[j] ** 2, degree)


def quartic_normal_integral(mesh: Triangulation, K: int, i: int, j: int, normal) -> float:
    """Integral over ``K`` of the derivative of lambda_i^2 lambda_j^2 along ``normal``."""
    ops = local_operators(mesh, K, 4)
    return float(_quartic_edge_bubble(i, j, 4) @ ops.mean_grad @ np.asarray(normal, dtype=float))


# ---------------------------------------------------------------------------
# Modified bubbles
# ---------------------------------------------------------------------------


@dataclass
class ExtendedBubble:
    """Modified non-conforming bubble of an edge (odd degree) or a triangle (even degree).

    ``field`` is scalar of degree ``k``; ``correction`` maps each supporting
    triangle to the coefficient of the subtracted quartic bubble.
    """

    owner: tuple
    k: int
    field: PiecewiseField
    correction: dict[int, float]
    energy: float

    @property
    def support(self) -> list[int]:
        return self.field.support()

    def vector(self, direction) -> PiecewiseField:
        """The vector field ``bubble * direction``."""
        direction = np.asarray(direction, dtype=float)
        coef = self.field.coef[:, 0:1, :] * direction[None, :, None]
        return PiecewiseField(self.field.mesh, self.k, coef)


def plain_bubble_field(mesh: Triangulation, owner: tuple, k: int) -> PiecewiseField:
    """Scalar field of the unmodified non-conforming bubble of ``owner``."""
    coef = np.zeros((mesh.n_triangles, 1, dubiner_dim(k)))
    kind, idx = owner
    if kind == "edge":
        if k % 2 == 0:
            raise ParityMismatch("edge bubbles exist for odd degree only")
        for K in mesh.edge_triangles[idx]:
            i = int(np.flatnonzero(mesh.tri_edges[K] == idx)[0])
            coef[K, 0] = edge_bubble_reference(k)[i]
    elif kind == "triangle":
        if k % 2 == 1:
            raise ParityMismatch("triangle bubbles exist for even degree only")
        coef[idx, 0] = triangle_bubble_reference(k)
    else:
        raise ValidationError(f"unknown bubble owner {owner!r}")
    return PiecewiseField(mesh, k, coef)


def build_extended_bubble_edge(mesh: Triangulation, e: int, k: int) -> ExtendedBubble:
    """Modified edge bubble for odd ``k >= 5`` on the interior edge ``e``.

    On the outer edges of the edge patch the trace is the Legendre trace of
    the plain bubble; on ``e`` it is the slope-corrected Legendre polynomial
    of degree ``k - 1``. Interior coefficients have least energy, and a
    quartic bubble per triangle removes the mean of the normal derivative.
    """
    return _edge_bubble_cached(mesh, int(e), int(k))


@lru_cache(maxsize=256)
def _edge_bubble_cached(mesh: Triangulation, e: int, k: int) -> ExtendedBubble:
    if k % 2 == 0 or k < 5:
        raise ParityMismatch(f"modified edge bubbles need odd degree >= 5, got {k}")
    if not mesh.is_interior_edge(e):
        raise ValidationError(f"edge {e} is not interior")
    phi = phi_tilde_poly(k)
    normal = mesh.normals[e]
    coef = np.zeros((mesh.n_triangles, 1, dubiner_dim(k)))
    correction = {}
    for K in mesh.edge_triangles[e]:
        i_opp = int(np.flatnonzero(mesh.tri_edges[K] == e)[0])

        def target(m, t, pts, i_opp=i_opp):
            if m == i_opp:
                return phi(2 * t - 1)
            lam = barycentric_ref(pts)[i_opp]
            return legendre_table(k, 1 - 2 * lam)[0][k]

        w = _fill_from_traces(mesh, K, k, target)
        a, b = [i for i in range(3) if i != i_opp]
        ops = local_operators(mesh, K, k)
        quartic = _quartic_edge_bubble(a, b, k)
        alpha = float((w @ ops.mean_grad) @ normal) / float((quartic @ ops.mean_grad) @ normal)
        coef[K, 0] = w - alpha * quartic
        correction[int(K)] = alpha
    f = PiecewiseField(mesh, k, coef)
    return ExtendedBubble(("edge", e), k, f, correction, math.sqrt(f.broken_h1_seminorm_sq()))


def build_extended_bubble_triangle(mesh: Triangulation, K: int, k: int) -> ExtendedBubble:
    """Modified triangle bubble for even ``k >= 4`` on triangle ``K``.

    The trace on the boundary of ``K`` is that of the plain bubble and the
    interior coefficients have least energy. The mean of every directional
    derivative is already zero because the trace integrates to zero along
    each edge, so the quartic correction vanishes; this is verified.
    """
    return _triangle_bubble_cached(mesh, int(K), int(k))


@lru_cache(maxsize=256)
def _triangle_bubble_cached(mesh: Triangulation, K: int, k: int) -> ExtendedBubble:
    if k % 2 == 1 or k < 4:
        raise ParityMismatch(f"modified triangle bubbles need even degree >= 4, got {k}")
    plain = triangle_bubble_reference(k)

    def target(m, t, pts):
        vals, _ = dubiner_eval(k, pts)
        return plain @ vals

    w = _fill_from_traces(mesh, K, k, target)
    ops = local_operators(mesh, K, k)
    means = w @ ops.mean_grad
    if np.max(np.abs(means)) > MEAN_TOL * max(1.0, mesh.diameters[K]):
        raise NumericalError(f"gradient mean of the triangle bubble is {means}")
    coef = np.zeros((mesh.n_triangles, 1, dubiner_dim(k)))
    coef[K, 0] = w
    f = PiecewiseField(mesh, k, coef)
    return ExtendedBubble(("triangle", K), k, f, {K: 0.0}, math.sqrt(f.broken_h1_seminorm_sq()))


# ---------------------------------------------------------------------------
# Alternating vertex functionals
# ---------------------------------------------------------------------------


def patch_numbering(mesh: Triangulation, z: int, anchor_edge: int | None = None) -> list[int]:
    """Counterclockwise numbering of the triangles around ``z``.

    Without an anchor the order of :meth:`Triangulation.vertex_patch` is
    used. With an anchor edge the first two triangles share that edge. For
    a boundary vertex whose anchor edge is the last link of the chain the
    chain is read backwards, which keeps consecutive triangles edge-adjacent.
    """
    patch = mesh.vertex_patch(z)
    tris = [K for K, _, _ in patch]
    if anchor_edge is None:
        return tris
    a, b = (int(v) for v in mesh.edges[anchor_edge])
    if z not in (a, b):
        raise ValidationError(f"edge {anchor_edge} does not contain vertex {z}")
    other = b if a == z else a
    first = next((j for j, (_, _, bb) in enumerate(patch) if bb == other), None)
    if first is None or not mesh.is_interior_edge(anchor_edge):
        raise ValidationError(f"edge {anchor_edge} is not shared by two triangles at vertex {z}")
    if not mesh.boundary_vertex_mask[z]:
        return tris[first:] + tris[:first]
    if first == 0:
        return tris
    if first + 1 == len(tris) - 1:
        return tris[::-1]
    return tris


def _alternating_sum(mesh: Triangulation, z: int, numbering: list[int], value) -> float:
    total = 0.0
    for ell, K in enumerate(numbering, start=1):
        total += (-1.0) ** ell * value(K, mesh.local_index(K, z))
    return float(total)


def _scalar_vertex_value(f: PiecewiseField, K: int, i: int) -> float:
    return float(f.eval_ref(K, REF_VERTICES[i : i + 1])[0, 0])


def functional_A(mesh: Triangulation, z: int, q: PiecewiseField, anchor_edge: int | None = None) -> float:
    """Alternating sum of the vertex values at ``z`` of a scalar piecewise field."""
    return _alternating_sum(mesh, z, patch_numbering(mesh, z, anchor_edge), lambda K, i: _scalar_vertex_value(q, K, i))


def functional_A_of_divergence(mesh: Triangulation, z: int, v: PiecewiseField, anchor_edge: int | None = None) -> float:
    """Alternating sum at ``z`` of the vertex values of the broken divergence of ``v``."""
    return _alternating_sum(mesh, z, patch_numbering(mesh, z, anchor_edge), v.vertex_divergence)


def functional_bound(mesh: Triangulation, z: int, q: PiecewiseField, k: int) -> float:
    """Upper bound binom(k+1, 2) * sum |K|^(-1/2) |q|_{L2(K)} over the patch of ``z``."""
    area = geometry(mesh).area
    total = 0.0
    for K in mesh.vertex_triangles[z]:
        total += float(np.sqrt(np.sum(2.0 * area[K] * q.coef[K] ** 2))) / math.sqrt(area[K])
    return math.comb(k + 1, 2) * total


def _anchor(report: TopologyReport | None, z: int) -> int | None:
    if report is None or report.fans is None:
        return None
    return report.fans.chosen_edge.get(z)


def _patch_width(mesh: Triangulation, z: int) -> float:
    return float(max(mesh.diameters[K] for K in mesh.vertex_triangles[z]))


@dataclass(frozen=True)
class MembershipResult:
    """Outcome of the Scott-Vogelius membership test."""

    member: bool
    residuals: dict[int, float]
    tolerances: dict[int, float]

    def __bool__(self) -> bool:
        return self.member

    @property
    def worst_ratio(self) -> float:
        return max((self.residuals[z] / self.tolerances[z] for z in self.residuals), default=0.0)


def sv_membership(
    mesh: Triangulation,
    q: PiecewiseField,
    eta: float = DEFAULT_ETA,
    report: TopologyReport | None = None,
    k: int | None = None,
    reference_norm: float | None = None,
    rtol: float = MEMBERSHIP_RTOL,
) -> MembershipResult:
    """Whether all alternating functionals of ``q`` vanish at the nearly critical vertices.

    A functional counts as zero when it is at most ``rtol * k^2 / h_z``
    times ``reference_norm`` (default: the L2 norm of ``q``), where ``h_z``
    is the largest diameter in the patch of ``z``.
    """
    if report is None:
        report = classify_critical(mesh, eta)
    k = q.degree + 1 if k is None else k
    norm = math.sqrt(q.l2_norm_sq()) if reference_norm is None else float(reference_norm)
    res, tols = {}, {}
    for z in report.critical:
        res[z] = abs(functional_A(mesh, z, q, _anchor(report, z)))
        tols[z] = rtol * k**2 / _patch_width(mesh, z) * norm
    member = all(res[z] <= tols[z] for z in res)
    return MembershipResult(member, res, tols)


# ---------------------------------------------------------------------------
# Fan systems (odd degree)
# ---------------------------------------------------------------------------


def _cot_sum(a: float, b: float) -> float:
    return math.sin(a + b) / (math.sin(a) * math.sin(b))


def fan_tridiagonal_matrix(apex_angles) -> np.ndarray:
    """Symmetric tridiagonal matrix of a fan from its ``n + 1`` apex angles."""
    ang = np.asarray(apex_angles, dtype=float)
    n = ang.size - 1
    if n < 1:
        raise ValidationError("a fan needs at least two apex angles")
    T = np.zeros((n, n))
    for j in range(n):
        T[j, j] = _cot_sum(ang[j], ang[j + 1])
        if j + 1 < n:
            T[j, j + 1] = T[j + 1, j] = 1.0 / math.sin(ang[j + 1])
    return T


def fan_determinant_closed_form(apex_angles) -> float:
    """Closed form sin(sum of angles) / product of their sines."""
    ang = np.asarray(apex_angles, dtype=float)
    return float(math.sin(ang.sum()) / np.prod(np.sin(ang)))


@dataclass
class FanSystem:
    """Linear system cancelling the vertex functionals of one fan.

    The system matrix is ``diag(row_signs) D (S T S + Delta)`` with the
    alternating sign matrix ``S``; ``M_direct`` is the same matrix obtained
    by evaluating the functionals on the modified bubbles.
    """

    fan: Fan
    k: int
    D: np.ndarray
    T: np.ndarray
    Delta: np.ndarray
    S: np.ndarray
    row_signs: np.ndarray
    apex_angles: np.ndarray
    r: np.ndarray
    alpha: np.ndarray
    M_direct: np.ndarray
    h: float

    @property
    def M(self) -> np.ndarray:
        return self.row_signs[:, None] * (self.D @ (self.S @ self.T @ self.S + self.Delta))

    @property
    def consistency(self) -> float:
        """Largest entrywise difference between the two system matrices, relative."""
        return float(np.max(np.abs(self.M - self.M_direct)) / np.max(np.abs(self.M)))

    @property
    def det_T(self) -> float:
        return float(np.linalg.det(self.T))

    @property
    def alpha_constant(self) -> float:
        """Measured C with |alpha| = C h / (k (k+1)) |r| (zero for r = 0)."""
        rn = float(np.linalg.norm(self.r))
        if rn == 0:
            return 0.0
        return float(np.linalg.norm(self.alpha)) * self.k * (self.k + 1) / (self.h * rn)

    def to_dict(self) -> dict:
        return {
            "fan": self.fan.to_dict(),
            "r": self.r.tolist(),
            "alpha": self.alpha.tolist(),
            "det_T": self.det_T,
            "fan_determinant_closed_form": fan_determinant_closed_form(self.apex_angles),
            "consistency": self.consistency,
            "alpha_constant": self.alpha_constant,
        }


def _angle_at(mesh: Triangulation, K: int, v: int) -> float:
    return float(mesh.angles[K, mesh.local_index(K, v)])


def fan_system(mesh: Triangulation, fan: Fan, q: PiecewiseField, k: int) -> FanSystem:
    """Assemble and solve the fan system for the pressure ``q`` (odd ``k >= 5``)."""
    if k % 2 == 0 or k < 5:
        raise ParityMismatch(f"fan systems need odd degree >= 5, got {k}")
    n = len(fan.members)
    tris = fan.triangles
    apex = fan.apex
    apex_angles = np.array([_angle_at(mesh, K, apex) for K in tris])
    T = fan_tridiagonal_matrix(apex_angles)
    delta = np.array([_cot_sum(_angle_at(mesh, tris[j], fan.members[j]), _angle_at(mesh, tris[j + 1], fan.members[j])) for j in range(n)])
    lengths = np.array([mesh.edge_lengths[e] for e in fan.edges])
    D = np.diag(-k * (k + 1) / lengths)
    S = np.diag([(-1.0) ** j for j in range(1, n + 1)])
    row_signs = np.array([1.0 if patch_numbering(mesh, z, e)[0] == tris[j + 1] else -1.0 for j, (z, e) in enumerate(zip(fan.members, fan.edges))])
    fields = [build_extended_bubble_edge(mesh, e, k).vector(nrm) for e, nrm in zip(fan.edges, fan.normals)]
    M_direct = np.array([[functional_A_of_divergence(mesh, z, f, e) for f in fields] for z, e in zip(fan.members, fan.edges)])
    r = np.array([functional_A(mesh, z, q, e) for z, e in zip(fan.members, fan.edges)])
    scaled = S @ T @ S + np.diag(delta)
    if abs(np.linalg.det(scaled)) < FAN_DET_TOL:
        raise FanSingular(f"fan at apex {apex} has a singular system (det {np.linalg.det(scaled):.3e})")
    h = float(max(mesh.diameters[K] for K in tris))
    system = FanSystem(fan, k, D, T, np.diag(delta), S, row_signs, apex_angles, r, np.zeros(n), M_direct, h)
    system.alpha = np.linalg.solve(system.M, r)
    return system


# ---------------------------------------------------------------------------
# Critical-pressure correction
# ---------------------------------------------------------------------------


@dataclass
class TriangleSystem:
    """Two-by-two system on one triangle for even degree."""

    triangle: int
    vertices: tuple[int, int, int]
    active: tuple[int, ...]
    M: np.ndarray
    M_direct: np.ndarray
    r: np.ndarray
    delta: np.ndarray

    @property
    def consistency(self) -> float:
        return float(np.max(np.abs(self.M - self.M_direct)) / np.max(np.abs(self.M)))

    def to_dict(self) -> dict:
        return {
            "triangle": self.triangle,
            "vertices": list(self.vertices),
            "active": list(self.active),
            "r": self.r.tolist(),
            "delta": self.delta.tolist(),
            "consistency": self.consistency,
        }


def even_matrix_bracket(mesh: Triangulation, K: int, s1: int, s2: int) -> np.ndarray:
    """The bracketed matrix [[|E1|, -|E1| cos a3], [-|E2| cos a3, |E2|]] for local corners s1, s2."""
    s3 = 3 - s1 - s2
    e1, e2 = mesh.edge_lengths[mesh.tri_edges[K, s1]], mesh.edge_lengths[mesh.tri_edges[K, s2]]
    c = math.cos(mesh.angles[K, s3])
    return np.array([[e1, -e1 * c], [-e2 * c, e2]])


def responsible_triangle(mesh: Triangulation, z: int, critical: set[int]) -> int:
    """Lowest-index triangle at ``z`` that has a vertex which is not nearly critical."""
    for K in sorted(mesh.vertex_triangles[z]):
        if not all(int(v) in critical for v in mesh.triangles[K]):
            return K
    raise PreconditionViolated(f"every triangle at vertex {z} has only nearly critical corners")


@dataclass
class PiCrResult:
    """Velocity that moves a pressure into the Scott-Vogelius subspace."""

    k: int
    eta: float
    field: PiecewiseField
    fan_systems: list[FanSystem]
    triangle_systems: list[TriangleSystem]
    div_means: np.ndarray
    membership: MembershipResult
    energy: float
    q_norm: float

    @property
    def lifting_ratio(self) -> float:
        """Broken H1 seminorm of the velocity over sqrt(log(k+1)) |q|."""
        return self.energy / (math.sqrt(math.log(self.k + 1)) * self.q_norm) if self.q_norm > 0 else 0.0

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "eta": self.eta,
            "fans": [s.to_dict() for s in self.fan_systems],
            "triangles": [s.to_dict() for s in self.triangle_systems],
            "max_div_mean": float(np.max(np.abs(self.div_means), initial=0.0)),
            "membership": {
                "member": self.membership.member,
                "residuals": {str(z): v for z, v in self.membership.residuals.items()},
                "tolerances": {str(z): v for z, v in self.membership.tolerances.items()},
            },
            "energy": self.energy,
            "q_norm": self.q_norm,
            "lifting_ratio": self.lifting_ratio,
        }


def as_pressure_field(mesh: Triangulation, k: int, q) -> PiecewiseField:
    """Scalar field of a pressure given as a field or as pressure coefficients."""
    if isinstance(q, PiecewiseField):
        if q.ncomp != 1:
            raise ValidationError("pressure must be a scalar field")
        return q
    return pressure_field(build_dofmap(mesh, k, "p"), np.asarray(q, dtype=float))


def _check_mean_zero(q: PiecewiseField) -> float:
    norm = math.sqrt(q.l2_norm_sq())
    mean = float(q.integrals().sum())
    area = float(geometry(q.mesh).area.sum())
    if abs(mean) > 1e-10 * max(norm, 1e-300) * math.sqrt(area) and abs(mean) > 1e-14:
        raise ValidationError(f"pressure must have zero mean, got {mean:.3e}")
    return norm


def pi_cr(mesh: Triangulation, k: int, q, eta: float = DEFAULT_ETA, report: TopologyReport | None = None) -> PiCrResult:
    """Combination of modified bubbles whose divergence carries the critical
    vertex functionals of ``q`` and has zero mean on every triangle.

    Odd ``k >= 5`` uses one fan system per fan and needs a mesh without
    nearly critical acute corners; even ``k >= 4`` uses one two-by-two
    system per responsible triangle.
    """
    if (k % 2 == 1 and k < 5) or (k % 2 == 0 and k < 4):
        raise ParityMismatch(f"no bubble construction for degree {k}")
    qf = as_pressure_field(mesh, k, q)
    q_norm = _check_mean_zero(qf)
    report = report or classify_critical(mesh, eta)
    v = PiecewiseField.zeros(mesh, k)
    fans: list[FanSystem] = []
    tri_systems: list[TriangleSystem] = []
    if k % 2 == 1:
        if report.critical_sets["acute"]:
            raise PreconditionViolated(f"nearly critical acute corners {report.critical_sets['acute']} need the extension step")
        dec = report.fans if report.fans is not None else fan_decomposition(mesh, report)
        for fan in dec.fans:
            system = fan_system(mesh, fan, qf, k)
            fans.append(system)
            for a, e, nrm in zip(system.alpha, fan.edges, fan.normals):
                v = v + build_extended_bubble_edge(mesh, e, k).vector(nrm) * a
    else:
        if mesh.n_triangles < 2:
            raise PreconditionViolated("even-degree construction needs more than one triangle")
        critical = set(report.critical)
        owner = {z: responsible_triangle(mesh, z, critical) for z in report.critical}
        for K in sorted(set(owner.values())):
            system = _triangle_system(mesh, K, k, qf, critical, owner, report)
            tri_systems.append(system)
            bubble = build_extended_bubble_triangle(mesh, K, k)
            s1, s2, _ = (mesh.local_index(K, z) for z in system.vertices)
            for dlt, s in zip(system.delta, (s1, s2)):
                v = v + bubble.vector(outer_normal(mesh, K, s)) * dlt
    rest = qf.elevate(k) - v.divergence()
    membership = sv_membership(mesh, rest, eta, report, k=k, reference_norm=q_norm)
    return PiCrResult(k, float(eta), v, fans, tri_systems, v.div_means(), membership, math.sqrt(v.broken_h1_seminorm_sq()), q_norm)


def _triangle_system(mesh, K, k, qf, critical, owner, report) -> TriangleSystem:
    tri = [int(v) for v in mesh.triangles[K]]
    active = [z for z in tri if owner.get(z) == K]
    passive = [z for z in tri if z in critical and z not in active]
    others = [z for z in tri if z not in critical]
    order = active + passive + others
    V = tuple(order[:3])
    s = [mesh.local_index(K, z) for z in V]
    bubble = build_extended_bubble_triangle(mesh, K, k)
    fields = [bubble.vector(outer_normal(mesh, K, s[j])) for j in range(2)]
    signs = []
    for z in V[:2]:
        numbering = patch_numbering(mesh, z, _anchor(report, z))
        signs.append((-1.0) ** (numbering.index(K) + 1))
    M_direct = np.array([[signs[i] * f.vertex_divergence(K, s[i]) for f in fields] for i in range(2)])
    bracket = even_matrix_bracket(mesh, K, s[0], s[1])
    M = np.array([-signs[i] for i in range(2)])[:, None] * binom2(k) / mesh.areas[K] * bracket
    r = np.array([functional_A(mesh, z, qf, _anchor(report, z)) if z in active else 0.0 for z in V[:2]])
    delta = np.linalg.solve(M, r)
    return TriangleSystem(K, V, tuple(active), M, M_direct, r, delta)


# ---------------------------------------------------------------------------
# Bernardi-Raugel mean correction
# ---------------------------------------------------------------------------


@dataclass
class BernardiRaugelResult:
    field: PiecewiseField
    coefficients: dict[int, float]
    residual: float
    energy: float


@lru_cache(maxsize=None)
def _quadratic_edge_bubble(i: int, j: int) -> np.ndarray:
    return project_reference(lambda p: 4.0 * barycentric_ref(p)[i] * barycentric_ref(p)[j], 2)


def bernardi_raugel(mesh: Triangulation, q, k: int | None = None) -> BernardiRaugelResult:
    """Conforming quadratic field from interior-edge normal bubbles whose
    divergence has the same integral as ``q`` on every triangle.

    ``q`` is a scalar field, or pressure coefficients of degree ``k - 1``.
    """
    if not isinstance(q, PiecewiseField):
        if k is None:
            raise ValidationError("degree k is needed for pressure coefficients")
    qf = as_pressure_field(mesh, k or 1, q)
    _check_mean_zero(qf)
    means = qf.integrals()[:, 0]
    interior = list(mesh.interior_edges)
    G = np.zeros((mesh.n_triangles, len(interior)))
    for j, e in enumerate(interior):
        first, second = mesh.edge_triangles[e]
        G[first, j] = 2.0 * mesh.edge_lengths[e] / 3.0
        G[second, j] = -2.0 * mesh.edge_lengths[e] / 3.0
    if interior:
        c, *_ = np.linalg.lstsq(G, means, rcond=None)
    else:
        c = np.zeros(0)
    resid = float(np.linalg.norm(G @ c - means)) if interior else float(np.linalg.norm(means))
    scale = max(float(np.linalg.norm(means)), 1e-300)
    if resid > 1e-10 * scale and resid > 1e-14:
        raise UnderdeterminedMeans(f"interior-edge bubbles miss the triangle means by {resid:.3e}")
    coef = np.zeros((mesh.n_triangles, 2, dubiner_dim(2)))
    for cj, e in zip(c, interior):
        n = mesh.normals[e]
        for K in mesh.edge_triangles[e]:
            i_opp = int(np.flatnonzero(mesh.tri_edges[K] == e)[0])
            a, b = [i for i in range(3) if i != i_opp]
            coef[K] += cj * n[:, None] * _quadratic_edge_bubble(a, b)[None, :]
    f = PiecewiseField(mesh, 2, coef)
    return BernardiRaugelResult(f, {int(e): float(cj) for e, cj in zip(interior, c)}, resid / scale, math.sqrt(f.broken_h1_seminorm_sq()))


# ---------------------------------------------------------------------------
# Local conforming fields
# ---------------------------------------------------------------------------


@dataclass
class LocalSpace:
    """Continuous degree-k functions vanishing on the boundary of a set of triangles."""

    mesh: Triangulation
    k: int
    triangles: list[int]
    n: int
    glob: dict[int, np.ndarray]
    coef: dict[int, np.ndarray]

    def stiffness(self) -> np.ndarray:
        A = np.zeros((self.n, self.n))
        for K in self.triangles:
            g, C = self.glob[K], self.coef[K]
            A[np.ix_(g, g)] += C @ local_operators(self.mesh, K, self.k).stiffness @ C.T
        return np.kron(np.eye(2), A)

    def to_field(self, x) -> PiecewiseField:
        x = np.asarray(x, dtype=float)
        out = np.zeros((self.mesh.n_triangles, 2, dubiner_dim(self.k)))
        for K in self.triangles:
            g, C = self.glob[K], self.coef[K]
            for c in range(2):
                out[K, c] = x[c * self.n + g] @ C
        return PiecewiseField(self.mesh, self.k, out)


def local_space(mesh: Triangulation, triangles, k: int, shared_edge: int | None = None) -> LocalSpace:
    """Lagrange functions on the interior nodes of ``triangles`` and of ``shared_edge``."""
    multi, lag = lagrange_reference(k)
    numbering: dict[tuple, int] = {}
    glob, coef = {}, {}
    shared = None
    if shared_edge is not None and mesh.is_interior_edge(shared_edge):
        shared = set(int(v) for v in mesh.edges[shared_edge])
    for K in triangles:
        g, c = [], []
        for j, m in enumerate(multi):
            key = _node_key(mesh.triangles[K], m)
            inner = len(key) == 3 or (len(key) == 2 and shared is not None and {v for v, _ in key} == shared)
            if not inner:
                continue
            numbering.setdefault(key, len(numbering))
            g.append(numbering[key])
            c.append(lag[j])
        glob[K] = np.array(g, dtype=np.int64)
        coef[K] = np.array(c, dtype=float).reshape(-1, dubiner_dim(k))
    return LocalSpace(mesh, k, list(triangles), len(numbering), glob, coef)


@dataclass
class VertexFieldResult:
    field: PiecewiseField
    energy: float
    residual: float


def vertex_field(mesh: Triangulation, e: int, j: int, k: int) -> VertexFieldResult:
    """Least-energy conforming field on the patch of edge ``e`` whose divergence
    has zero mean on every triangle and vertex values 1 at endpoint ``j`` (1 or 2)
    of ``e`` and 0 at every other triangle corner."""
    if k < 3:
        raise ValidationError(f"vertex fields need degree >= 3, got {k}")
    if j not in (1, 2):
        raise ValidationError(f"endpoint index must be 1 or 2, got {j}")
    y = int(mesh.edges[e][j - 1])
    tris = list(mesh.edge_triangles[e])
    space = local_space(mesh, tris, k, e)
    rows, rhs = [], []
    for K in tris:
        ops = local_operators(mesh, K, k)
        g, C = space.glob[K], space.coef[K]
        for i in range(3):
            row = np.zeros(2 * space.n)
            for c in range(2):
                row[c * space.n + g] += C @ ops.vertex_grad[:, i, c]
            rows.append(row)
            rhs.append(1.0 if int(mesh.triangles[K][i]) == y else 0.0)
        row = np.zeros(2 * space.n)
        for c in range(2):
            row[c * space.n + g] += C @ ops.mean_grad[:, c]
        rows.append(row)
        rhs.append(0.0)
    sol = minimal_energy(space.stiffness(), np.array(rows), np.array(rhs), tol=1e-9)
    return VertexFieldResult(space.to_field(sol.x), math.sqrt(sol.energy), sol.residual)


def _local_divergence(v: PiecewiseField, K: int, degree: int) -> np.ndarray:
    """Dubiner coefficients (degree ``degree``) of the divergence of ``v`` on ``K``."""
    rule, vals, _ = _tables(degree, v.degree + degree)
    return vals @ (rule.weights * v.div_ref(K, rule.points))


def interior_divergence_solve(mesh: Triangulation, K: int, k: int, target: np.ndarray) -> tuple[ConstrainedSolution, LocalSpace]:
    """Least-energy field vanishing on the boundary of ``K`` with divergence ``target``.

    ``target`` holds Dubiner coefficients of degree ``k - 1`` on ``K``.
    """
    space = local_space(mesh, [K], k)
    rule, vals, grads = _tables(k, 2 * k)
    g = geometry(mesh).grad_to_physical(K, grads)
    test = vals[: dubiner_dim(k - 1)] * rule.weights[None, :]
    B = np.zeros((dubiner_dim(k - 1), 2 * space.n))
    C = space.coef[K]
    for c in range(2):
        B[:, c * space.n + space.glob[K]] = (test @ g[:, :, c].T) @ C.T
    return minimal_energy(space.stiffness(), B, target, tol=1e-8), space


@dataclass
class AcuteStepResult:
    """Velocity carrying the pressure on the attached triangles."""

    k: int
    field: PiecewiseField
    attached: list[int]
    parts: list[dict] = field(default_factory=list)
    residual: float = 0.0
    energy: float = 0.0
    q_norm: float = 0.0

    @property
    def lifting_ratio(self) -> float:
        return self.energy / (math.sqrt(math.log(self.k + 1)) * self.q_norm) if self.q_norm > 0 else 0.0

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "attached": list(self.attached),
            "parts": self.parts,
            "residual": self.residual,
            "energy": self.energy,
            "lifting_ratio": self.lifting_ratio,
        }


def _check_step_preconditions(mesh: Triangulation, subset: set[int]) -> dict[int, tuple[int, int]]:
    inner = [z for z in mesh.interior_vertices if all(K in subset for K in mesh.vertex_triangles[z])]
    if not inner:
        raise PreconditionViolated("the stable subset has no interior vertex")
    attach: dict[int, tuple[int, int]] = {}
    for K in sorted(set(range(mesh.n_triangles)) - subset):
        options = []
        for e in mesh.tri_edges[K]:
            other = mesh.other_triangle(int(e), K)
            if other is not None and other in subset:
                options.append((int(e), int(other)))
        if not options:
            raise PreconditionViolated(f"triangle {K} shares no edge with the stable subset")
        attach[K] = min(options)
    count: dict[int, int] = {}
    for _, Kp in attach.values():
        count[Kp] = count.get(Kp, 0) + 1
    if any(c > 2 for c in count.values()):
        raise PreconditionViolated("a triangle of the subset has more than two attached neighbours")
    return attach


def acute_extension_step(mesh: Triangulation, subset, q, k: int) -> AcuteStepResult:
    """Velocity whose broken divergence equals ``q`` on every triangle outside ``subset``.

    The Bernardi-Raugel field fixes the triangle means. On each attached
    triangle a modified edge bubble fixes the value at the corner opposite
    the attaching edge, two vertex fields fix the values at the edge
    endpoints and a least-energy interior field supplies the rest. The
    velocity also changes the divergence inside ``subset``; that remainder
    is left to a right inverse on the subset.
    """
    if k % 2 == 0 or k < 5:
        raise PreconditionViolated(f"the extension step needs odd degree >= 5, got {k}")
    subset = {int(K) for K in subset}
    if not subset <= set(range(mesh.n_triangles)):
        raise PreconditionViolated("subset refers to unknown triangles")
    qf = as_pressure_field(mesh, k, q)
    q_norm = _check_mean_zero(qf)
    if len(subset) == mesh.n_triangles:
        return AcuteStepResult(k, PiecewiseField.zeros(mesh, k), [], q_norm=q_norm)
    attach = _check_step_preconditions(mesh, subset)
    br = bernardi_raugel(mesh, qf)
    v = br.field.elevate(k)
    q1 = qf.elevate(k) - v.divergence()
    parts = []
    for K, (e, Kp) in attach.items():
        n = mesh.normals[e] if mesh.edge_triangles[e][0] == K else -mesh.normals[e]
        iz = int(np.flatnonzero(mesh.tri_edges[K] == e)[0])
        bubble = build_extended_bubble_edge(mesh, e, k).vector(n)
        alpha = _scalar_vertex_value(q1, K, iz) / bubble.vertex_divergence(K, iz)
        v1 = bubble * alpha
        v2 = PiecewiseField.zeros(mesh, k)
        for j in (1, 2):
            y = int(mesh.edges[e][j - 1])
            iy = mesh.local_index(K, y)
            q2y = _scalar_vertex_value(q1, K, iy) - v1.vertex_divergence(K, iy)
            v2 = v2 + vertex_field(mesh, e, j, k).field * q2y
        v12 = v1 + v2
        q1K = q1.coef[K, 0, : dubiner_dim(k - 1)]
        q3 = q1K - _local_divergence(v12, K, k - 1)
        sol, space = interior_divergence_solve(mesh, K, k, q3)
        v3 = space.to_field(sol.x)
        v = v + v12 + v3
        parts.append(
            {
                "triangle": int(K),
                "edge": int(e),
                "neighbour": int(Kp),
                "alpha": float(alpha),
                "energy_v1": math.sqrt(v1.broken_h1_seminorm_sq()),
                "energy_v2": math.sqrt(v2.broken_h1_seminorm_sq()),
                "energy_v3": math.sqrt(sol.energy),
            }
        )
    rest = (qf.elevate(k) - v.divergence()).coef
    area = geometry(mesh).area
    err = math.sqrt(sum(2.0 * area[K] * float(np.sum(rest[K] ** 2)) for K in attach))
    residual = err / q_norm if q_norm > 0 else err
    return AcuteStepResult(k, v, sorted(attach), parts, residual, math.sqrt(v.broken_h1_seminorm_sq()), q_norm)
