"""Dense assembly of the discrete Stokes bilinear forms.

All element integrals use the reference quadrature of degree ``2k + 2``;
element contributions are summed in fixed triangle order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import SingularOperator, ValidationError
from .femspace import PRESSURE_SCALE, DofMap, _tables, dubiner_dim, geometry
from .mesh import Triangulation


@dataclass(frozen=True)
class AssembledOperator:
    """Dense matrix tagged with the maps of its rows and columns.

    ``kind`` is one of ``stiffness``, ``divergence``, ``pressure_mass`` or
    ``velocity_mass``.
    """

    matrix: np.ndarray
    row_map: DofMap
    col_map: DofMap
    kind: str

    def dump(self, path) -> None:
        """Write ``rows cols`` followed by the row-major entries."""
        rows, cols = self.matrix.shape
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"{rows} {cols}\n")
            np.savetxt(fh, self.matrix, fmt="%.17g")


def quadrature_degree(k: int) -> int:
    return 2 * k + 2


def element_dubiner_stiffness(mesh: Triangulation, K: int, d: int, qdeg: int) -> np.ndarray:
    """Gram matrix of physical gradients of the Dubiner basis on ``K``."""
    rule, _, grads = _tables(d, qdeg)
    geo = geometry(mesh)
    g = geo.grad_to_physical(K, grads)  # (n_p, nq, 2)
    gw = g * rule.weights[None, :, None]
    return 2.0 * geo.area[K] * np.einsum("iqd,jqd->ij", gw, g)


def element_dubiner_divergence(mesh: Triangulation, K: int, d: int, dp: int, qdeg: int) -> np.ndarray:
    """Integrals of pressure basis times partial derivatives, shape ``(2, n_q, n_p)``."""
    rule, vals, grads = _tables(d, qdeg)
    geo = geometry(mesh)
    g = geo.grad_to_physical(K, grads)
    p = PRESSURE_SCALE * vals[: dubiner_dim(dp)] * rule.weights[None, :]
    return 2.0 * geo.area[K] * np.einsum("iq,jqc->cij", p, g)


def _scalar_stiffness(vmap: DofMap) -> np.ndarray:
    mesh, n = vmap.mesh, vmap.n_scalar
    qdeg = quadrature_degree(vmap.k)
    A = np.zeros((n, n))
    for K in range(mesh.n_triangles):
        g, C = vmap.glob[K], vmap.coef[K]
        if g.size == 0:
            continue
        A[np.ix_(g, g)] += C @ element_dubiner_stiffness(mesh, K, vmap.degree, qdeg) @ C.T
    return A


def assemble_broken_gradient(mesh: Triangulation, vmap: DofMap, check: bool = True) -> AssembledOperator:
    """Stiffness matrix of the broken gradient form on the vector space of ``vmap``."""
    if vmap.space == "p":
        raise ValidationError("stiffness needs a velocity map")
    As = _scalar_stiffness(vmap)
    A = np.kron(np.eye(2), As)
    A = 0.5 * (A + A.T)
    if check and A.size:
        try:
            sla.cholesky(As, lower=True)
        except np.linalg.LinAlgError as exc:
            raise SingularOperator("stiffness matrix is not positive definite") from exc
    return AssembledOperator(A, vmap, vmap, "stiffness")


def assemble_div_coupling(mesh: Triangulation, vmap: DofMap, pmap: DofMap) -> AssembledOperator:
    """Matrix of (div v, q) with pressure rows and vector velocity columns."""
    if pmap.space != "p":
        raise ValidationError("second map must be a pressure map")
    n = vmap.n_scalar
    B = np.zeros((pmap.n_scalar, 2 * n))
    qdeg = quadrature_degree(vmap.k)
    for K in range(mesh.n_triangles):
        g, C = vmap.glob[K], vmap.coef[K]
        if g.size == 0:
            continue
        D = element_dubiner_divergence(mesh, K, vmap.degree, pmap.degree, qdeg)
        rows = pmap.glob[K]
        for c in range(2):
            B[np.ix_(rows, c * n + g)] += D[c] @ C.T
    return AssembledOperator(B, pmap, vmap, "divergence")


def assemble_pressure_mass(mesh: Triangulation, pmap: DofMap) -> AssembledOperator:
    """Block diagonal mass matrix of the pressure basis (|K| times identity)."""
    n_loc = dubiner_dim(pmap.degree)
    diag = np.repeat(geometry(mesh).area, n_loc)
    return AssembledOperator(np.diag(diag), pmap, pmap, "pressure_mass")


def assemble_velocity_mass(mesh: Triangulation, vmap: DofMap, vector: bool = True) -> AssembledOperator:
    """L2 mass matrix of the velocity space (scalar when ``vector`` is false)."""
    n = vmap.n_scalar
    Ms = np.zeros((n, n))
    area = geometry(mesh).area
    for K in range(mesh.n_triangles):
        g, C = vmap.glob[K], vmap.coef[K]
        if g.size:
            Ms[np.ix_(g, g)] += 2.0 * area[K] * (C @ C.T)
    M = np.kron(np.eye(2), Ms) if vector else Ms
    return AssembledOperator(M, vmap, vmap, "velocity_mass")


def scalar_stiffness(mesh: Triangulation, vmap: DofMap) -> np.ndarray:
    """Scalar broken-gradient Gram matrix (one velocity component)."""
    return _scalar_stiffness(vmap)


def constant_pressure(pmap: DofMap) -> np.ndarray:
    """Coefficients of the constant pressure 1; ``c @ M @ q`` is the integral of q."""
    n_loc = dubiner_dim(pmap.degree)
    c = np.zeros(pmap.n_scalar)
    c[::n_loc] = 1.0  # the first local pressure function is the constant 1
    return c
