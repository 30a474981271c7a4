"""Discrete inf-sup constants, minimum-norm divergence right inverses and
discrete Friedrichs constants.

The inf-sup constant is the square root of the smallest eigenvalue of the
pressure Schur complement ``B A^{-1} B^T`` against the pressure mass matrix,
restricted to mean-zero pressures. Its value is taken from the equivalent
singular value problem; the eigenpair supplies the critical pressure and
the residual.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg as sla

from .assembly import (
    assemble_broken_gradient,
    assemble_div_coupling,
    assemble_pressure_mass,
    assemble_velocity_mass,
    constant_pressure,
    scalar_stiffness,
)
from .errors import EmptyVelocitySpace, InfeasibleConstraint, NoInnerVertex, NotSPD, ValidationError
from .femspace import DofMap, build_dofmap
from .mesh import Triangulation, extension_sequence

ZERO_INFSUP = 1e-10


class ZeroInfSupWarning(UserWarning):
    """The computed inf-sup constant is numerically zero."""


# ---------------------------------------------------------------------------
# Generalized eigenproblem
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EigenPair:
    value: float
    vector: np.ndarray
    residual: float


def _cholesky(M: np.ndarray, what: str) -> np.ndarray:
    try:
        return sla.cholesky(0.5 * (M + M.T), lower=True)
    except np.linalg.LinAlgError as exc:
        raise NotSPD(f"{what} is not symmetric positive definite") from exc


def symmetric_eig_smallest(A, M, deflation=None, largest: bool = False) -> EigenPair:
    """Smallest (or largest) eigenpair of ``A x = lam M x``.

    With ``deflation`` the problem is restricted to vectors M-orthogonal to
    the given vector(s). The pencil is reduced to standard symmetric form by
    the Cholesky factor of ``M``; the returned residual is
    ``|A x - lam M x| / (|A| |x|)``.
    """
    A = np.asarray(A, dtype=float)
    M = np.asarray(M, dtype=float)
    if A.shape != M.shape or A.shape[0] != A.shape[1]:
        raise ValidationError("A and M must be square matrices of equal size")
    n = A.shape[0]
    L = _cholesky(M, "mass matrix")
    C = sla.solve_triangular(L, sla.solve_triangular(L, 0.5 * (A + A.T), lower=True).T, lower=True)
    C = 0.5 * (C + C.T)
    if deflation is not None:
        D = np.asarray(deflation, dtype=float).reshape(n, -1)
        U = L.T @ D
        Qfull, _ = np.linalg.qr(U, mode="complete")
        basis = Qfull[:, U.shape[1] :]
    else:
        basis = np.eye(n)
    if basis.shape[1] == 0:
        raise EmptyVelocitySpace("eigenproblem on an empty subspace")
    vals, vecs = np.linalg.eigh(basis.T @ C @ basis)
    j = -1 if largest else 0
    y = basis @ vecs[:, j]
    x = sla.solve_triangular(L.T, y, lower=False)
    x /= math.sqrt(x @ M @ x)
    lam = float(vals[j])
    norm_a = max(np.linalg.norm(A, 2), np.finfo(float).tiny)
    res = float(np.linalg.norm(A @ x - lam * (M @ x)) / (norm_a * np.linalg.norm(x)))
    return EigenPair(lam, x, res)


# ---------------------------------------------------------------------------
# Stokes pair
# ---------------------------------------------------------------------------


class StokesPair:
    """Crouzeix-Raviart velocities of degree k with discontinuous pressures of degree k - 1."""

    def __init__(self, mesh: Triangulation, k: int):
        self.mesh = mesh
        self.k = k
        self.vmap: DofMap = build_dofmap(mesh, k, "cr")
        self.pmap: DofMap = build_dofmap(mesh, k, "p")
        if self.vmap.n_scalar == 0:
            raise EmptyVelocitySpace(f"velocity space is trivial for k={k} on this mesh")
        if self.pmap.n_scalar <= 1:
            raise EmptyVelocitySpace("mean-zero pressure space is trivial")

    @cached_property
    def A(self) -> np.ndarray:
        return assemble_broken_gradient(self.mesh, self.vmap).matrix

    @cached_property
    def B(self) -> np.ndarray:
        return assemble_div_coupling(self.mesh, self.vmap, self.pmap).matrix

    @cached_property
    def Mp(self) -> np.ndarray:
        return assemble_pressure_mass(self.mesh, self.pmap).matrix

    @cached_property
    def chol_A(self):
        return sla.cho_factor(self.A, lower=True)

    @cached_property
    def schur(self) -> np.ndarray:
        S = self.B @ sla.cho_solve(self.chol_A, self.B.T)
        return 0.5 * (S + S.T)

    def smallest_singular_value(self) -> float:
        """Smallest singular value of the mass-weighted divergence operator on mean-zero pressures.

        Its square is the smallest Schur-complement eigenvalue, but it is
        computed without squaring, so a vanishing constant is resolved to
        round-off instead of to its square root.
        """
        w = np.sqrt(np.diag(self.Mp))
        L = self.chol_A[0] if self.chol_A[1] else self.chol_A[0].T
        W = sla.solve_triangular(L, (self.B / w[:, None]).T, lower=True).T
        U = (w * self.constant)[:, None]
        basis = np.linalg.qr(U, mode="complete")[0][:, 1:]
        return float(np.linalg.svd(basis.T @ W, compute_uv=False)[-1])

    @property
    def constant(self) -> np.ndarray:
        return constant_pressure(self.pmap)

    def divergence_of(self, v: np.ndarray) -> np.ndarray:
        """Pressure coefficients of the broken divergence of ``v``."""
        return (self.B @ v) / np.diag(self.Mp)


@dataclass(frozen=True)
class InfSupResult:
    k: int
    c: float
    dim_v: int
    dim_p: int
    residual: float
    scaled: float
    scaled_ext: float | None
    extension_L: int | None
    critical_pressure: np.ndarray

    @property
    def unstable(self) -> bool:
        return self.c < ZERO_INFSUP


def _extension_length(mesh: Triangulation) -> int | None:
    try:
        return extension_sequence(mesh)[0]
    except NoInnerVertex:
        return None


def infsup_constant(mesh: Triangulation, k: int, pair: StokesPair | None = None) -> InfSupResult:
    """Discrete inf-sup constant of the degree-k Crouzeix-Raviart pair.

    Also reports ``c * sqrt(log(k+1))`` and ``c * log(k+1)^((1+L)/2)`` where
    ``L`` is the length of the extension sequence.
    """
    pair = pair or StokesPair(mesh, k)
    eig = symmetric_eig_smallest(pair.schur, pair.Mp, deflation=pair.constant)
    c = pair.smallest_singular_value()
    if c < ZERO_INFSUP:
        warnings.warn(f"inf-sup constant is numerically zero for k={k}", ZeroInfSupWarning, stacklevel=2)
    L = _extension_length(mesh)
    log = math.log(k + 1)
    return InfSupResult(
        k=k,
        c=c,
        dim_v=pair.vmap.n_vector,
        dim_p=pair.pmap.n_scalar,
        residual=eig.residual,
        scaled=c * math.sqrt(log),
        scaled_ext=None if L is None else c * log ** ((1 + L) / 2),
        extension_L=L,
        critical_pressure=eig.vector,
    )


def min_norm_right_inverse(mesh: Triangulation, k: int, q, pair: StokesPair | None = None) -> tuple[np.ndarray, float]:
    """Velocity of least broken energy whose divergence equals ``q``.

    Returns the velocity coefficients and the ratio of its broken H1
    seminorm to the L2 norm of ``q`` (zero for ``q = 0``).
    """
    pair = pair or StokesPair(mesh, k)
    q = np.asarray(q, dtype=float)
    Mq = pair.Mp @ q
    one = pair.constant
    mean = float(one @ Mq)
    if abs(mean) > 1e-12 * max(1.0, math.sqrt(abs(q @ Mq))) * math.sqrt(float(one @ pair.Mp @ one)):
        raise ValidationError(f"pressure must have zero mean, got {mean:.3e}")
    if not np.any(q):
        return np.zeros(pair.vmap.n_vector), 0.0
    Mone = pair.Mp @ one
    S = pair.schur + np.outer(Mone, Mone)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", sla.LinAlgWarning)
            mu = sla.solve(S, Mq, assume_a="sym")
    except (np.linalg.LinAlgError, sla.LinAlgWarning) as exc:
        raise InfeasibleConstraint("divergence constraint is singular") from exc
    v = sla.cho_solve(pair.chol_A, pair.B.T @ mu)
    resid = pair.B @ v - Mq
    qnorm = math.sqrt(q @ Mq)
    if math.sqrt(resid @ np.linalg.solve(pair.Mp, resid)) > 1e-8 * qnorm:
        raise InfeasibleConstraint("divergence constraint cannot be met (inf-sup constant vanishes)")
    return v, math.sqrt(v @ pair.A @ v) / qnorm


def divergence_residual(pair: StokesPair, v, q) -> float:
    """L2 norm of div v - q divided by the L2 norm of q."""
    d = pair.divergence_of(np.asarray(v)) - np.asarray(q)
    qn = math.sqrt(q @ pair.Mp @ q)
    return math.sqrt(d @ pair.Mp @ d) / qn if qn > 0 else math.sqrt(d @ pair.Mp @ d)


def brute_force_infsup(pair: StokesPair, samples: int = 20000, seed: int = 0) -> float:
    """Minimum of the supremum ratio over random mean-zero pressures.

    Independent of the eigen solver; it overestimates the constant by an
    amount that shrinks with the number of samples.
    """
    rng = np.random.default_rng(seed)
    n = pair.pmap.n_scalar
    one = pair.constant
    Mone = pair.Mp @ one
    Q = rng.standard_normal((samples, n))
    Q -= np.outer(Q @ Mone / (one @ Mone), one)
    AinvBt = sla.cho_solve(pair.chol_A, pair.B.T)
    sup_sq = np.einsum("si,ij,sj->s", Q, pair.B @ AinvBt, Q)
    norm_sq = np.einsum("si,ij,sj->s", Q, pair.Mp, Q)
    return float(np.sqrt(np.min(sup_sq / norm_sq)))


# ---------------------------------------------------------------------------
# Friedrichs constant
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FriedrichsResult:
    k: int
    constant: float
    lam_max: float
    residual: float


def friedrichs_constant(mesh: Triangulation, k: int, space: str = "cr") -> FriedrichsResult:
    """Smallest C with |u|_L2^2 <= (C^2 - 1) |grad_T u|^2 on the scalar space.

    ``space`` is ``cr`` (Crouzeix-Raviart) or ``s0`` (its conforming subspace).
    """
    vmap = build_dofmap(mesh, k, space)
    if vmap.n_scalar == 0:
        raise EmptyVelocitySpace(f"space {space} is trivial for k={k}")
    A = scalar_stiffness(mesh, vmap)
    M = assemble_velocity_mass(mesh, vmap, vector=False).matrix
    eig = symmetric_eig_smallest(M, A, largest=True)
    return FriedrichsResult(k, math.sqrt(1.0 + eig.value), eig.value, eig.residual)
