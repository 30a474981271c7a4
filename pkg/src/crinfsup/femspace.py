"""Reference-element bases, quadrature and degree-of-freedom maps.

Every local polynomial is stored by its coefficients in the orthonormal
Dubiner basis of the reference triangle with corners (0,0), (1,0), (0,1).
Local vertex ``i`` of a mesh triangle is mapped to reference corner ``i``,
so barycentric coordinate ``i`` is 1 - x - y, x, y for i = 0, 1, 2.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import comb, sqrt

import numpy as np
from scipy.special import roots_jacobi

from .errors import (
    NumericalError,
    ParityMismatch,
    PointOutsidePatch,
    PointOutsideTriangle,
    ValidationError,
)
from .mesh import Triangulation
from .orthopoly import gauss_legendre, jacobi_eval, legendre_table

PRESSURE_SCALE = 1.0 / sqrt(2.0)
_INSIDE_TOL = 1e-12


# ---------------------------------------------------------------------------
# Quadrature
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuadRule:
    """Quadrature on the reference triangle (weights add up to 1/2)."""

    points: np.ndarray
    weights: np.ndarray
    degree: int


def _monomial_self_test(rule: QuadRule) -> None:
    from math import factorial

    x, y = rule.points[:, 0], rule.points[:, 1]
    for a in range(rule.degree + 1):
        for b in range(rule.degree + 1 - a):
            exact = factorial(a) * factorial(b) / factorial(a + b + 2)
            got = float(np.sum(rule.weights * x**a * y**b))
            if abs(got - exact) > 1e-13 * exact:
                raise NumericalError(f"quadrature of degree {rule.degree} fails on x^{a} y^{b}")


@lru_cache(maxsize=None)
def quad_rule(degree: int) -> QuadRule:
    """Collapsed Gauss-Legendre x Gauss-Jacobi rule exact up to ``degree``.

    Uses ``ceil(degree/2) + 1`` points per direction and checks all
    monomials up to the declared degree on construction.
    """
    if degree < 0:
        raise ValidationError("quadrature degree must be non-negative")
    n = -(-degree // 2) + 1
    s, ws = gauss_legendre(n)
    t, wt = roots_jacobi(n, 1.0, 0.0)
    S, T = np.meshgrid(s, t, indexing="ij")
    y = (1.0 + T) / 2.0
    x = (1.0 - y) * (1.0 + S) / 2.0
    w = np.outer(ws, wt) / 8.0
    pts = np.column_stack([x.ravel(), y.ravel()])
    pts.setflags(write=False)
    wts = w.ravel()
    wts.setflags(write=False)
    rule = QuadRule(pts, wts, degree)
    _monomial_self_test(rule)
    return rule


# ---------------------------------------------------------------------------
# Orthonormal basis on the reference triangle
# ---------------------------------------------------------------------------


def dubiner_dim(d: int) -> int:
    return (d + 1) * (d + 2) // 2 if d >= 0 else 0


def dubiner_indices(d: int) -> list[tuple[int, int]]:
    """(p, q) pairs ordered by total degree, so degree-d' functions form a prefix."""
    return [(p, t - p) for t in range(d + 1) for p in range(t, -1, -1)]


def dubiner_eval(d: int, pts) -> tuple[np.ndarray, np.ndarray]:
    """Values ``(n_p, n)`` and reference gradients ``(n_p, n, 2)`` of the
    orthonormal basis of degree ``d`` at reference points ``pts``."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    x, y = pts[:, 0], pts[:, 1]
    u = 2 * x + y - 1
    s = 1 - y
    # scaled Legendre Q_p = s^p L_p(u/s), polynomial in (x, y)
    Q = np.zeros((d + 1, x.size))
    Qx = np.zeros_like(Q)
    Qy = np.zeros_like(Q)
    Q[0] = 1.0
    if d >= 1:
        Q[1], Qx[1], Qy[1] = u, 2.0, 1.0
    for n in range(1, d):
        a, b = (2 * n + 1) / (n + 1), n / (n + 1)
        Q[n + 1] = a * u * Q[n] - b * s**2 * Q[n - 1]
        Qx[n + 1] = a * (2 * Q[n] + u * Qx[n]) - b * s**2 * Qx[n - 1]
        Qy[n + 1] = a * (Q[n] + u * Qy[n]) - b * (-2 * s * Q[n - 1] + s**2 * Qy[n - 1])
    n_p = dubiner_dim(d)
    vals = np.empty((n_p, x.size))
    grads = np.empty((n_p, x.size, 2))
    z = 2 * y - 1
    for idx, (p, q) in enumerate(dubiner_indices(d)):
        c = sqrt(2.0 * (2 * p + 1) * (p + q + 1))
        J, dJ = jacobi_eval(q, 2 * p + 1, 0, z)
        J = np.broadcast_to(J, x.shape)
        dJ = np.broadcast_to(dJ, x.shape)
        vals[idx] = c * Q[p] * J
        grads[idx, :, 0] = c * Qx[p] * J
        grads[idx, :, 1] = c * (Qy[p] * J + 2.0 * Q[p] * dJ)
    return vals, grads


@lru_cache(maxsize=None)
def _tables(d: int, qdeg: int):
    rule = quad_rule(qdeg)
    vals, grads = dubiner_eval(d, rule.points)
    for arr in (vals, grads):
        arr.setflags(write=False)
    return rule, vals, grads


def project_reference(func, d: int) -> np.ndarray:
    """Dubiner coefficients of a reference polynomial of degree <= d.

    ``func`` maps an ``(n, 2)`` array of reference points to values.
    """
    rule, vals, _ = _tables(d, 2 * d)
    f = np.asarray(func(rule.points), dtype=float)
    return vals @ (rule.weights * f)


def barycentric_ref(pts) -> np.ndarray:
    """Barycentric coordinates ``(3, n)`` of reference points."""
    pts = np.atleast_2d(pts)
    return np.vstack([1 - pts[:, 0] - pts[:, 1], pts[:, 0], pts[:, 1]])


# ---------------------------------------------------------------------------
# Element geometry
# ---------------------------------------------------------------------------


class ElementGeometry:
    """Affine map from the reference triangle onto every mesh triangle."""

    def __init__(self, mesh: Triangulation):
        p = mesh.vertices[mesh.triangles]
        self.origin = p[:, 0]
        self.jac = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)  # (nT, 2, 2)
        self.det = np.linalg.det(self.jac)
        self.jinv = np.linalg.inv(self.jac)
        self.area = 0.5 * np.abs(self.det)

    def to_physical(self, K: int, ref) -> np.ndarray:
        return self.origin[K] + np.atleast_2d(ref) @ self.jac[K].T

    def to_reference(self, K: int, pts) -> np.ndarray:
        return (np.atleast_2d(pts) - self.origin[K]) @ self.jinv[K].T

    def grad_to_physical(self, K: int, ref_grad: np.ndarray) -> np.ndarray:
        """Map reference gradients (last axis of length 2) to physical ones."""
        return ref_grad @ self.jinv[K]

    def barycentric_gradients(self, K: int) -> np.ndarray:
        ref = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
        return ref @ self.jinv[K]


@lru_cache(maxsize=64)
def _geometry_cache(mesh_id: int, mesh: Triangulation) -> ElementGeometry:
    return ElementGeometry(mesh)


def geometry(mesh: Triangulation) -> ElementGeometry:
    return _geometry_cache(id(mesh), mesh)


def barycentric_normal_derivative(mesh: Triangulation, K: int, i: int, k_edge: int) -> float:
    """Derivative of barycentric coordinate ``i`` of ``K`` along the outer
    normal of the edge opposite local vertex ``k_edge`` (closed form)."""
    edge_len = mesh.edge_lengths[mesh.tri_edges[K, i]]
    factor = edge_len / (2.0 * mesh.areas[K])
    if i == k_edge:
        return -factor
    ell = 3 - i - k_edge
    return factor * np.cos(mesh.angles[K, ell])


def outer_normal(mesh: Triangulation, K: int, i: int) -> np.ndarray:
    """Outer unit normal of ``K`` on the edge opposite its local vertex ``i``."""
    e = mesh.tri_edges[K, i]
    n = mesh.normals[e]
    return n if mesh.edge_triangles[e][0] == K else -n


# ---------------------------------------------------------------------------
# Special local functions
# ---------------------------------------------------------------------------


def lagrange_multi_indices(k: int) -> list[tuple[int, int, int]]:
    """Barycentric multi-indices (a0, a1, a2) with a0 + a1 + a2 = k."""
    return [(k - a1 - a2, a1, a2) for a2 in range(k + 1) for a1 in range(k + 1 - a2)]


@lru_cache(maxsize=None)
def lagrange_reference(k: int) -> tuple[tuple[tuple[int, int, int], ...], np.ndarray]:
    """Equispaced nodes and Dubiner coefficients ``(n_nodes, n_p)`` of the nodal basis."""
    idx = lagrange_multi_indices(k)
    nodes = np.array([[a1 / k, a2 / k] for _, a1, a2 in idx]) if k > 0 else np.array([[1 / 3, 1 / 3]])
    vals, _ = dubiner_eval(k, nodes)
    coef = np.linalg.inv(vals)  # coef @ vals = I
    coef.setflags(write=False)
    return tuple(idx), coef


@lru_cache(maxsize=None)
def edge_bubble_reference(k: int) -> np.ndarray:
    """Coefficients ``(3, n_p)`` of L_k(1 - 2 lambda_i), i = 0, 1, 2."""

    def make(i):
        return lambda pts: legendre_table(k, 1 - 2 * barycentric_ref(pts)[i])[0][k]

    out = np.array([project_reference(make(i), k) for i in range(3)])
    out.setflags(write=False)
    return out


@lru_cache(maxsize=None)
def triangle_bubble_reference(k: int) -> np.ndarray:
    """Coefficients of (-1 + sum_i L_k(1 - 2 lambda_i)) / 2."""
    out = 0.5 * edge_bubble_reference(k).sum(axis=0)
    out = out.copy()
    out[0] -= 0.5 / sqrt(2.0)  # the constant 1 has coefficient 1/sqrt(2)
    out.setflags(write=False)
    return out


def _locate(mesh: Triangulation, K: int, pt, exc) -> np.ndarray:
    ref = geometry(mesh).to_reference(K, pt)[0]
    lam = barycentric_ref(ref[None, :])[:, 0]
    if np.any(lam < -_INSIDE_TOL * max(1.0, mesh.diameters[K])):
        raise exc(f"point {tuple(pt)} is outside triangle {K}")
    return lam


def cr_edge_bubble_eval(mesh: Triangulation, e: int, k: int, point, side: int | None = None) -> float:
    """Value of the non-conforming edge bubble of edge ``e`` at ``point``.

    ``side`` selects the adjacent triangle when the point lies on the edge.
    """
    if k % 2 == 0:
        raise ParityMismatch("edge bubbles exist for odd degree only")
    point = np.asarray(point, dtype=float)
    tris = mesh.edge_triangles[e]
    candidates = [tris[side]] if side is not None else list(tris)
    for K in candidates:
        try:
            lam = _locate(mesh, K, point, PointOutsidePatch)
        except PointOutsidePatch:
            continue
        i = int(np.flatnonzero(mesh.tri_edges[K] == e)[0])
        return float(legendre_table(k, 1 - 2 * lam[i])[0][k])
    raise PointOutsidePatch(f"point {tuple(point)} is outside the patch of edge {e}")


def cr_triangle_bubble_eval(mesh: Triangulation, K: int, k: int, point) -> float:
    """Value of the non-conforming triangle bubble of ``K`` at ``point``."""
    if k % 2 == 1:
        raise ParityMismatch("triangle bubbles exist for even degree only")
    lam = _locate(mesh, K, np.asarray(point, dtype=float), PointOutsideTriangle)
    vals = legendre_table(k, 1 - 2 * lam)[0][k]
    return float(0.5 * (-1.0 + vals.sum()))


# ---------------------------------------------------------------------------
# Degree-of-freedom maps
# ---------------------------------------------------------------------------

SPACES = ("cr", "s0", "s", "p")


@dataclass
class DofMap:
    """Enumerated global basis of a scalar space.

    For each triangle ``glob[K]`` lists the global indices of the basis
    functions living on ``K`` and ``coef[K]`` holds their Dubiner
    coefficients (one row per function, degree ``degree``). ``entities``
    names the geometric entity of every global function. Vector spaces use
    the index ``component * n_scalar + i``.
    """

    mesh: Triangulation
    k: int
    space: str
    degree: int
    n_scalar: int
    glob: list[np.ndarray]
    coef: list[np.ndarray]
    entities: list[tuple]

    @property
    def n_vector(self) -> int:
        return 2 * self.n_scalar

    @property
    def dim(self) -> int:
        """Dimension of the space as used in the Stokes pair."""
        return self.n_scalar if self.space == "p" else self.n_vector


def _node_key(tri, multi) -> tuple:
    return tuple(sorted((int(v), int(a)) for v, a in zip(tri, multi) if a > 0))


def _node_on_boundary(mesh: Triangulation, key: tuple) -> bool:
    if len(key) == 1:
        return bool(mesh.boundary_vertex_mask[key[0][0]])
    if len(key) == 2:
        e = mesh.edge_of(key[0][0], key[1][0])
        return not mesh.is_interior_edge(e)
    return False


def build_dofmap(mesh: Triangulation, k: int, space: str) -> DofMap:
    """Enumerate the basis of one of the spaces ``cr`` (Crouzeix-Raviart with
    zero boundary moments), ``s0`` (continuous, zero boundary values), ``s``
    (continuous) or ``p`` (discontinuous pressures of degree k - 1)."""
    if k < 1:
        raise ValidationError(f"degree must be at least 1, got {k}")
    if space not in SPACES:
        raise ValidationError(f"unknown space {space!r}")
    nT = mesh.n_triangles
    if space == "p":
        n_loc = dubiner_dim(k - 1)
        local = PRESSURE_SCALE * np.eye(n_loc)
        glob = [K * n_loc + np.arange(n_loc) for K in range(nT)]
        ents = [("triangle", K, j) for K in range(nT) for j in range(n_loc)]
        return DofMap(mesh, k, space, k - 1, nT * n_loc, glob, [local] * nT, ents)

    multi, lag = lagrange_reference(k)
    numbering: dict[tuple, int] = {}
    entities: list[tuple] = []
    interior_vertices = set(mesh.interior_vertices)
    glob, coef = [], []
    for K, tri in enumerate(mesh.triangles):
        g_loc, c_loc = [], []
        for j, m in enumerate(multi):
            key = _node_key(tri, m)
            if space != "s" and _node_on_boundary(mesh, key):
                continue
            if space == "cr" and k % 2 == 1 and len(key) == 1 and key[0][0] in interior_vertices:
                continue
            if key not in numbering:
                numbering[key] = len(entities)
                entities.append(("node", key))
            g_loc.append(numbering[key])
            c_loc.append(lag[j])
        glob.append(g_loc)
        coef.append(c_loc)
    if space == "cr":
        if k % 2 == 0:
            bubble = triangle_bubble_reference(k)
            for K in range(nT):
                glob[K].append(len(entities))
                coef[K].append(bubble)
                entities.append(("triangle", K))
        else:
            ebub = edge_bubble_reference(k)
            for e in mesh.interior_edges:
                g = len(entities)
                entities.append(("edge", e))
                for K in mesh.edge_triangles[e]:
                    i = int(np.flatnonzero(mesh.tri_edges[K] == e)[0])
                    glob[K].append(g)
                    coef[K].append(ebub[i])
    n_p = dubiner_dim(k)
    glob_arr = [np.array(g, dtype=np.int64) for g in glob]
    coef_arr = [np.array(c, dtype=float).reshape(-1, n_p) for c in coef]
    return DofMap(mesh, k, space, k, len(entities), glob_arr, coef_arr, entities)


def effective_pressure_dim(pmap: DofMap) -> int:
    """Pressure dimension after removing the constant mode."""
    return pmap.n_scalar - 1


# ---------------------------------------------------------------------------
# Piecewise polynomial fields
# ---------------------------------------------------------------------------


class PiecewiseField:
    """Piecewise polynomial field with ``ncomp`` components.

    ``coef`` has shape ``(nT, ncomp, n_p)`` in the Dubiner basis of degree
    ``degree``.
    """

    def __init__(self, mesh: Triangulation, degree: int, coef):
        self.mesh = mesh
        self.degree = int(degree)
        self.coef = np.asarray(coef, dtype=float)
        if self.coef.ndim != 3 or self.coef.shape[0] != mesh.n_triangles or self.coef.shape[2] != dubiner_dim(degree):
            raise ValidationError(f"coefficient array of shape {self.coef.shape} does not match degree {degree}")

    @property
    def ncomp(self) -> int:
        return self.coef.shape[1]

    @classmethod
    def zeros(cls, mesh: Triangulation, degree: int, ncomp: int = 2) -> "PiecewiseField":
        return cls(mesh, degree, np.zeros((mesh.n_triangles, ncomp, dubiner_dim(degree))))

    @classmethod
    def from_dofs(cls, dofmap: DofMap, x, ncomp: int = 2) -> "PiecewiseField":
        """Field of a coefficient vector (vector layout ``comp * n_scalar + i``)."""
        x = np.asarray(x, dtype=float)
        n = dofmap.n_scalar
        if x.size != ncomp * n:
            raise ValidationError(f"expected {ncomp * n} coefficients, got {x.size}")
        out = np.zeros((dofmap.mesh.n_triangles, ncomp, dubiner_dim(dofmap.degree)))
        for K in range(dofmap.mesh.n_triangles):
            g = dofmap.glob[K]
            if g.size == 0:
                continue
            for c in range(ncomp):
                out[K, c] = x[c * n + g] @ dofmap.coef[K]
        return cls(dofmap.mesh, dofmap.degree, out)

    def elevate(self, degree: int) -> "PiecewiseField":
        if degree < self.degree:
            raise ValidationError("cannot lower the degree")
        out = np.zeros(self.coef.shape[:2] + (dubiner_dim(degree),))
        out[..., : self.coef.shape[2]] = self.coef
        return PiecewiseField(self.mesh, degree, out)

    def __add__(self, other: "PiecewiseField") -> "PiecewiseField":
        d = max(self.degree, other.degree)
        return PiecewiseField(self.mesh, d, self.elevate(d).coef + other.elevate(d).coef)

    def __sub__(self, other: "PiecewiseField") -> "PiecewiseField":
        return self + other * (-1.0)

    def __mul__(self, scalar: float) -> "PiecewiseField":
        return PiecewiseField(self.mesh, self.degree, self.coef * float(scalar))

    __rmul__ = __mul__

    def eval_ref(self, K: int, ref) -> np.ndarray:
        """Values ``(ncomp, n)`` at reference points of triangle ``K``."""
        vals, _ = dubiner_eval(self.degree, ref)
        return self.coef[K] @ vals

    def grad_ref(self, K: int, ref) -> np.ndarray:
        """Physical gradients ``(ncomp, n, 2)`` at reference points of ``K``."""
        _, grads = dubiner_eval(self.degree, ref)
        g = np.einsum("cp,pnd->cnd", self.coef[K], grads)
        return geometry(self.mesh).grad_to_physical(K, g)

    def eval_physical(self, K: int, pts) -> np.ndarray:
        return self.eval_ref(K, geometry(self.mesh).to_reference(K, pts))

    def grad_physical(self, K: int, pts) -> np.ndarray:
        return self.grad_ref(K, geometry(self.mesh).to_reference(K, pts))

    def div_ref(self, K: int, ref) -> np.ndarray:
        g = self.grad_ref(K, ref)
        return g[0, :, 0] + g[1, :, 1]

    def vertex_divergence(self, K: int, i: int) -> float:
        ref = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])[i : i + 1]
        return float(self.div_ref(K, ref)[0])

    def divergence(self) -> "PiecewiseField":
        """Broken divergence as a scalar field of one degree lower (stored at the same degree)."""
        d = self.degree
        rule, vals, _ = _tables(d, 2 * d)
        out = np.zeros((self.mesh.n_triangles, 1, dubiner_dim(d)))
        for K in range(self.mesh.n_triangles):
            div = self.div_ref(K, rule.points)
            out[K, 0] = vals @ (rule.weights * div)
        return PiecewiseField(self.mesh, d, out)

    def div_means(self) -> np.ndarray:
        """Integral of the broken divergence over every triangle."""
        rule = quad_rule(max(self.degree - 1, 0))
        area = geometry(self.mesh).area
        return np.array([2.0 * area[K] * np.sum(rule.weights * self.div_ref(K, rule.points)) for K in range(self.mesh.n_triangles)])

    def integrals(self) -> np.ndarray:
        """Integral of every component over every triangle, shape ``(nT, ncomp)``."""
        return sqrt(2.0) * geometry(self.mesh).area[:, None] * self.coef[:, :, 0]

    def broken_h1_seminorm_sq(self) -> float:
        rule, _, grads = _tables(self.degree, 2 * self.degree)
        geo = geometry(self.mesh)
        total = 0.0
        for K in range(self.mesh.n_triangles):
            g = geo.grad_to_physical(K, np.einsum("cp,pnd->cnd", self.coef[K], grads))
            total += 2.0 * geo.area[K] * float(np.sum(rule.weights[None, :, None] * g**2))
        return total

    def l2_norm_sq(self) -> float:
        return float(np.sum(2.0 * geometry(self.mesh).area[:, None, None] * self.coef**2))

    def support(self, tol: float = 0.0) -> list[int]:
        return [K for K in range(self.mesh.n_triangles) if np.max(np.abs(self.coef[K])) > tol]


def pressure_field(pmap: DofMap, q) -> PiecewiseField:
    """Scalar field of a pressure coefficient vector."""
    return PiecewiseField.from_dofs(pmap, q, ncomp=1)


def pressure_coefficients(pmap: DofMap, field: PiecewiseField) -> np.ndarray:
    """Pressure coefficients of a scalar piecewise field of degree <= k - 1."""
    n_loc = dubiner_dim(pmap.degree)
    if field.degree > pmap.degree and np.max(np.abs(field.coef[:, 0, n_loc:]), initial=0.0) > 1e-9 * max(1.0, np.max(np.abs(field.coef))):
        raise ValidationError("field is not a discrete pressure")
    return (field.coef[:, 0, :n_loc] / PRESSURE_SCALE).ravel()


def vertex_values(field: PiecewiseField, K: int, i: int) -> np.ndarray:
    ref = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])[i : i + 1]
    return field.eval_ref(K, ref)[:, 0]


# ---------------------------------------------------------------------------
# Jump moments
# ---------------------------------------------------------------------------


def edge_trace_points(mesh: Triangulation, e: int, s) -> np.ndarray:
    """Physical points on edge ``e`` at parameters ``s`` in [-1, 1] (from low to high vertex)."""
    a, b = mesh.vertices[mesh.edges[e]]
    s = np.asarray(s, dtype=float)
    return a[None, :] + ((1 + s) / 2)[:, None] * (b - a)[None, :]


def _field_scale(field: PiecewiseField) -> float:
    multi, _ = lagrange_reference(max(field.degree, 1))
    d = max(field.degree, 1)
    nodes = np.array([[a1 / d, a2 / d] for _, a1, a2 in multi])
    vals, _ = dubiner_eval(field.degree, nodes)
    return float(max(np.max(np.abs(field.coef[K] @ vals)) for K in range(field.mesh.n_triangles)))


def jump_moment_residuals(field: PiecewiseField, k: int) -> np.ndarray:
    """Scaled jump moments of ``field`` on every edge against L_0..L_{k-1}.

    On interior edges the jump is tested, on boundary edges the trace. Each
    moment is divided by the edge length and the largest magnitude of the
    field on the equispaced nodes. Returns an array ``(nE, ncomp, k)``.
    """
    mesh = field.mesh
    s, w = gauss_legendre(field.degree + k)
    leg = legendre_table(max(k - 1, 0), s)[0][:k]
    scale = max(_field_scale(field), 1e-300)
    out = np.zeros((mesh.n_edges, field.ncomp, k))
    for e in range(mesh.n_edges):
        pts = edge_trace_points(mesh, e, s)
        tris = mesh.edge_triangles[e]
        trace = field.eval_physical(tris[0], pts)
        if len(tris) == 2:
            trace = trace - field.eval_physical(tris[1], pts)
        moments = (trace * w[None, :]) @ leg.T * (mesh.edge_lengths[e] / 2.0)
        out[e] = np.abs(moments) / (mesh.edge_lengths[e] * scale)
    return out


def dofmap_jump_residuals(dofmap: DofMap) -> np.ndarray:
    """Largest scaled jump moment of every scalar basis function of ``dofmap``.

    For each function the moments against L_0..L_{k-1} of its jump on every
    interior edge, and of its trace on every boundary edge, are divided by
    the edge length and the function's largest value on the equispaced nodes.
    """
    mesh, k, d = dofmap.mesh, dofmap.k, dofmap.degree
    geo = geometry(mesh)
    s, w = gauss_legendre(d + k)
    leg = legendre_table(max(k - 1, 0), s)[0][:k]
    multi, _ = lagrange_reference(d)
    nodes = np.array([[a1 / d, a2 / d] for _, a1, a2 in multi])
    node_vals, _ = dubiner_eval(d, nodes)
    scale = np.zeros(dofmap.n_scalar)
    for K in range(mesh.n_triangles):
        if dofmap.glob[K].size:
            local = np.max(np.abs(dofmap.coef[K] @ node_vals), axis=1)
            np.maximum.at(scale, dofmap.glob[K], local)
    worst = np.zeros(dofmap.n_scalar)
    for e in range(mesh.n_edges):
        pts = edge_trace_points(mesh, e, s)
        moments: dict[int, np.ndarray] = {}
        for sign, K in zip((1.0, -1.0), mesh.edge_triangles[e]):
            vals, _ = dubiner_eval(d, geo.to_reference(K, pts))
            local = dofmap.coef[K] @ vals @ (w[:, None] * leg.T) * (mesh.edge_lengths[e] / 2.0)
            for g, row in zip(dofmap.glob[K], local):
                moments[int(g)] = moments.get(int(g), 0.0) + sign * row
        for g, mom in moments.items():
            worst[g] = max(worst[g], float(np.max(np.abs(mom))) / (mesh.edge_lengths[e] * scale[g]))
    return worst


def binom2(k: int) -> int:
    return comb(k + 1, 2)
