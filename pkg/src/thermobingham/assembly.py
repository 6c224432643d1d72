"""Matrices and load vectors of the semi-discrete flow and energy systems.

Velocity vectors are blocked: the first ``n`` entries hold the x-component at
every node, the next ``n`` the y-component.  Strain-type vectors of length
``4m`` are blocked per component ``(E11, E12, E21, E22)``, each block holding
one value per triangle.
"""
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .linalg import finalize

# 3-point edge-midpoint rule: exact for quadratics on a triangle
MIDPOINT_BARY = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])
MIDPOINT_WEIGHTS = np.full(3, 1.0 / 3.0)

# 7-point Radon rule, exact for degree 5
_r15 = np.sqrt(15.0)
_b1 = (6.0 + _r15) / 21.0
_b2 = (6.0 - _r15) / 21.0
_a1, _a2 = 1.0 - 2.0 * _b1, 1.0 - 2.0 * _b2
RADON_BARY = np.array(
    [
        [1 / 3, 1 / 3, 1 / 3],
        [_a1, _b1, _b1],
        [_b1, _a1, _b1],
        [_b1, _b1, _a1],
        [_a2, _b2, _b2],
        [_b2, _a2, _b2],
        [_b2, _b2, _a2],
    ]
)
RADON_WEIGHTS = np.array(
    [9.0 / 40.0] + [(155.0 + _r15) / 1200.0] * 3 + [(155.0 - _r15) / 1200.0] * 3
)


class AssemblyError(ValueError):
    pass


class NonPositiveViscosity(AssemblyError):
    pass


class NegativeYield(AssemblyError):
    pass


@dataclass(frozen=True)
class PhysicalParams:
    """Material and heat-transfer coefficients.

    Viscosity and yield stress are affine in the temperature,
    ``mu = mu0 + delta_mu * theta`` and ``g = g0 + delta_g * theta``.
    """

    mu0: float
    delta_mu: float
    g0: float
    delta_g: float
    kappa: float
    Cp: float
    alpha: float = 0.0
    beta: float = 0.0
    rho: float = 1.0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not self.mu0 > 0:
            raise ValueError(f"mu0 must be positive, got {self.mu0}")
        if not self.g0 >= 0:
            raise ValueError(f"g0 must be non-negative, got {self.g0}")
        # affine laws: checking both ends of [0, 1] covers the interval
        if min(self.mu(0.0), self.mu(1.0)) <= 0:
            raise ValueError("viscosity mu(theta) must stay positive for theta in [0, 1]")
        if min(self.g(0.0), self.g(1.0)) < 0:
            raise ValueError("yield stress g(theta) must stay non-negative for theta in [0, 1]")
        if not self.kappa > 0:
            raise ValueError(f"kappa must be positive, got {self.kappa}")
        if not self.Cp > 0:
            raise ValueError(f"Cp must be positive, got {self.Cp}")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be non-negative")
        if self.rho != 1.0:
            raise ValueError("density is fixed to 1")

    def mu(self, theta):
        return self.mu0 + self.delta_mu * np.asarray(theta, dtype=float)

    def g(self, theta):
        return self.g0 + self.delta_g * np.asarray(theta, dtype=float)


@dataclass(frozen=True)
class AssembledOperators:
    """Temperature- and velocity-independent operators of one mesh."""

    M_vec: sp.csr_matrix
    M_sca: sp.csr_matrix
    A_sca: sp.csr_matrix
    K_vec: sp.csr_matrix
    M_gamma: sp.csr_matrix
    B: sp.csr_matrix
    E: sp.csr_matrix
    tri_weights: np.ndarray
    quad_weights: np.ndarray
    velocity_dirichlet: np.ndarray
    checkerboard: np.ndarray

    @property
    def n_nodes(self):
        return self.M_sca.shape[0]

    @property
    def n_triangles(self):
        return self.tri_weights.shape[0]


def _scatter(mesh, local):
    """Sum per-triangle 3x3 blocks into an ``n x n`` matrix."""
    tri = mesh.triangles
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    n = mesh.n_nodes
    return finalize(sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)))


def _local_mass(weights):
    base = (np.ones((3, 3)) + np.eye(3)) / 12.0
    return weights[:, None, None] * base[None]


def mass_matrix(mesh, weights=None):
    """P1 mass matrix, optionally with a per-triangle constant weight."""
    w = mesh.tri_area if weights is None else mesh.tri_area * weights
    return _scatter(mesh, _local_mass(w))


def stiffness_matrix(mesh):
    g = mesh.grad_basis
    local = mesh.tri_area[:, None, None] * np.einsum("tik,tjk->tij", g, g)
    return _scatter(mesh, local)


def boundary_mass_gamma(mesh):
    """Consistent P1 mass on the top-edge (Robin) segments."""
    e = mesh.boundary_edges_gamma
    L = mesh.boundary_edge_length
    local = L[:, None, None] * ((np.ones((2, 2)) + np.eye(2)) / 6.0)[None]
    rows = np.repeat(e, 2, axis=1).ravel()
    cols = np.tile(e, (1, 2)).ravel()
    n = mesh.n_nodes
    return finalize(sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)))


def strain_operator(mesh):
    """Map velocity coefficients (2n) to per-triangle symmetric gradients (4m).

    Rows ``t``, ``m+t``, ``2m+t``, ``3m+t`` hold ``E11, E12, E21, E22`` on
    triangle ``t``; the two off-diagonal rows are identical.
    """
    m, n = mesh.n_triangles, mesh.n_nodes
    g = mesh.grad_basis
    tri = mesh.triangles
    t = np.repeat(np.arange(m), 3)
    nodes = tri.ravel()
    gx = g[:, :, 0].ravel()
    gy = g[:, :, 1].ravel()
    rows = np.concatenate([t, m + t, m + t, 2 * m + t, 2 * m + t, 3 * m + t])
    cols = np.concatenate([nodes, nodes, n + nodes, nodes, n + nodes, n + nodes])
    vals = np.concatenate([gx, 0.5 * gy, 0.5 * gx, 0.5 * gy, 0.5 * gx, gy])
    return finalize(sp.coo_matrix((vals, (rows, cols)), shape=(4 * m, 2 * n)))


def divergence_coupling(mesh):
    """``B[(c, i), Q] = -integral over Q of d(phi_i)/dx_c`` (2n x l)."""
    m, n = mesh.n_triangles, mesh.n_nodes
    g = mesh.grad_basis
    w = -mesh.tri_area[:, None]
    rows = np.concatenate([mesh.triangles.ravel(), n + mesh.triangles.ravel()])
    cols = np.concatenate([np.repeat(mesh.tri_quad, 3)] * 2)
    vals = np.concatenate([(w * g[:, :, 0]).ravel(), (w * g[:, :, 1]).ravel()])
    return finalize(sp.coo_matrix((vals, (rows, cols)), shape=(2 * n, mesh.n_quads)))


def assemble_constant_operators(mesh):
    """Assemble every operator that depends on the mesh only."""
    M = mass_matrix(mesh)
    A = stiffness_matrix(mesh)
    bnd = mesh.boundary_nodes
    return AssembledOperators(
        M_vec=finalize(sp.block_diag([M, M])),
        M_sca=M,
        A_sca=A,
        K_vec=finalize(sp.block_diag([A, A])),
        M_gamma=boundary_mass_gamma(mesh),
        B=divergence_coupling(mesh),
        E=strain_operator(mesh),
        tri_weights=mesh.tri_area.copy(),
        quad_weights=mesh.quad_area.copy(),
        velocity_dirichlet=np.concatenate([bnd, mesh.n_nodes + bnd]),
        checkerboard=mesh.checkerboard * mesh.quad_area,
    )


def triangle_average(mesh, theta):
    """Arithmetic mean of the three vertex values on every triangle."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (mesh.n_nodes,):
        raise ValueError(f"nodal vector of length {mesh.n_nodes} expected, got {theta.shape}")
    return theta[mesh.triangles].mean(axis=1)


def viscosity_on_triangles(mesh, theta, params):
    mu = params.mu(triangle_average(mesh, theta))
    if np.any(mu <= 0):
        raise NonPositiveViscosity(f"viscosity {mu.min():.4g} on triangle {int(np.argmin(mu))}")
    return mu


def yield_on_triangles(mesh, theta, params):
    g = params.g(triangle_average(mesh, theta))
    if np.any(g < 0):
        raise NegativeYield(f"yield stress {g.min():.4g} on triangle {int(np.argmin(g))}")
    return g


def strain_weight_diagonal(mesh, per_triangle):
    """Diagonal ``4m x 4m`` matrix with ``w_T |T|`` repeated over the 4 blocks."""
    return sp.diags(np.tile(per_triangle * mesh.tri_area, 4))


def assemble_weighted_viscosity(mesh, theta, params, E=None):
    """``A_mu = E^T D_mu E`` with ``D_mu = diag(mu_T |T|)`` per strain block."""
    E = strain_operator(mesh) if E is None else E
    D = strain_weight_diagonal(mesh, viscosity_on_triangles(mesh, theta, params))
    return finalize(E.T @ D @ E)


def assemble_multiplier_coupling(mesh, theta, params, E=None):
    """``Q_g = E^T D_g`` (2n x 4m) with ``D_g = diag(g_T |T|)`` per strain block."""
    E = strain_operator(mesh) if E is None else E
    D = strain_weight_diagonal(mesh, yield_on_triangles(mesh, theta, params))
    return finalize(E.T @ D)


def assemble_stress_coupling(mesh, E=None):
    """``E^T D`` with ``D = diag(|T|)`` per strain block (2n x 4m).

    Couples a multiplier that already carries the yield stress, i.e.
    ``|q_T| <= g_T``, into the momentum equation, so that the material yields
    at stress ``g``.  Equals ``Q_g`` with every ``g_T`` set to one.
    """
    E = strain_operator(mesh) if E is None else E
    return finalize(E.T @ strain_weight_diagonal(mesh, np.ones(mesh.n_triangles)))


def _convection_local(mesh, w):
    """Local ``int (w . grad phi_j) phi_i`` blocks, shape (m, 3, 3)."""
    n = mesh.n_nodes
    w = np.asarray(w, dtype=float)
    if w.shape != (2 * n,):
        raise ValueError(f"velocity vector of length {2 * n} expected, got {w.shape}")
    tri = mesh.triangles
    wx, wy = w[:n][tri], w[n:][tri]
    # velocity at the quadrature points, (m, q)
    qx = wx @ MIDPOINT_BARY.T
    qy = wy @ MIDPOINT_BARY.T
    g = mesh.grad_basis
    adv = qx[:, :, None] * g[:, None, :, 0] + qy[:, :, None] * g[:, None, :, 1]  # (m, q, j)
    local = np.einsum("q,qi,tqj->tij", MIDPOINT_WEIGHTS, MIDPOINT_BARY, adv)
    return mesh.tri_area[:, None, None] * local


def assemble_convection_scalar(mesh, w):
    """Scalar advection matrix ``C[i, j] = int (w . grad phi_j) phi_i`` (n x n)."""
    return _scatter(mesh, _convection_local(mesh, w))


def assemble_convection_vector(mesh, w):
    """Vector advection matrix for ``((w . grad) v, phi)``: two copies of the
    scalar one, one per velocity component (2n x 2n)."""
    C = assemble_convection_scalar(mesh, w)
    return finalize(sp.block_diag([C, C]))


def strain_norm_on_triangles(mesh, u, E=None):
    """Frobenius norm of the discrete symmetric gradient on each triangle."""
    E = strain_operator(mesh) if E is None else E
    m = mesh.n_triangles
    e = (E @ u).reshape(4, m)
    return np.sqrt(np.einsum("at,at->t", e, e))


def assemble_dissipation(mesh, u, params=None, E=None):
    """Weighted masses and load vectors of the dissipation term.

    Returns ``(M1, M2, Th1, Th2)``: P1 mass matrices weighted per triangle by
    ``|Eu|_T`` and ``|Eu|_T**2``, and nodal vectors accumulating
    ``|T| / 6 * weight`` from every triangle incident to a node.
    """
    s = strain_norm_on_triangles(mesh, u, E)
    M1 = mass_matrix(mesh, s)
    M2 = mass_matrix(mesh, s * s)
    n = mesh.n_nodes
    tri = mesh.triangles.ravel()
    w1 = np.repeat(mesh.tri_area * s / 6.0, 3)
    w2 = np.repeat(mesh.tri_area * s * s / 6.0, 3)
    Th1 = np.bincount(tri, weights=w1, minlength=n)
    Th2 = np.bincount(tri, weights=w2, minlength=n)
    return M1, M2, Th1, Th2


def rotational_force(x, y, amplitude=300.0):
    """Body force ``amplitude * (y - 1/2, 1/2 - x)``."""
    return amplitude * (y - 0.5), amplitude * (0.5 - x)


def vector_load(mesh, force, t=0.0, bary=RADON_BARY, weights=RADON_WEIGHTS):
    """``int f . phi_i`` for a vector field ``force(x, y, t) -> (fx, fy)``."""
    p = mesh.nodes[mesh.triangles]
    qp = np.einsum("qk,tkd->tqd", bary, p)
    fx, fy = force(qp[..., 0], qp[..., 1], t)
    fx = np.broadcast_to(fx, qp.shape[:2])
    fy = np.broadcast_to(fy, qp.shape[:2])
    wA = mesh.tri_area[:, None] * weights[None]
    lx = np.einsum("tq,tq,qi->ti", wA, fx, bary)
    ly = np.einsum("tq,tq,qi->ti", wA, fy, bary)
    n = mesh.n_nodes
    tri = mesh.triangles.ravel()
    return np.concatenate(
        [np.bincount(tri, lx.ravel(), minlength=n), np.bincount(tri, ly.ravel(), minlength=n)]
    )


def scalar_load(mesh, source, t=0.0, bary=RADON_BARY, weights=RADON_WEIGHTS):
    """``int s phi_i`` for a scalar field ``source(x, y, t)``."""
    p = mesh.nodes[mesh.triangles]
    qp = np.einsum("qk,tkd->tqd", bary, p)
    s = np.broadcast_to(source(qp[..., 0], qp[..., 1], t), qp.shape[:2])
    wA = mesh.tri_area[:, None] * weights[None]
    loc = np.einsum("tq,tq,qi->ti", wA, s, bary)
    return np.bincount(mesh.triangles.ravel(), loc.ravel(), minlength=mesh.n_nodes)


def body_force_vector(mesh, t=0.0, amplitude=300.0):
    """Load vector of the rotational body force (linear, so the midpoint rule
    is exact for the P1 products)."""
    return vector_load(
        mesh,
        lambda x, y, _t: rotational_force(x, y, amplitude),
        t,
        bary=MIDPOINT_BARY,
        weights=MIDPOINT_WEIGHTS,
    )
