"""Semismooth Newton solver for one implicit flow step.

Unknowns are the velocity ``u`` (2n), pressure ``p`` (l) and multiplier
``q`` (4m).  The nonlinear system is

    Xi u + B p + Q_g q = F
    -B^T u = 0
    max(G, gamma N(E u)) * q = gamma G * E u

Each Newton step eliminates ``dq`` through the diagonal block
``diag(max(G, gamma N(Eu)))`` and solves the remaining velocity/pressure
saddle system with a zero-mean pressure constraint.
"""
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import huber
from .linalg import SaddleSystem, solve_saddle

DEFAULT_TOL = float(np.sqrt(np.finfo(float).eps))
DEFAULT_MAX_ITER = 50
# relative residual below which a step is taken as an exact solve
RESIDUAL_CERTIFICATE = 1e-12


class MaxIterationsExceeded(RuntimeError):
    def __init__(self, message, history):
        super().__init__(message)
        self.residual_history = list(history)


@dataclass
class FlowStepProblem:
    """Data of one flow solve; ``theta`` enters only through ``Xi``, ``Q_g`` and ``G``."""

    Xi: sp.csr_matrix
    B: sp.csr_matrix
    Q_g: sp.csr_matrix
    E: sp.csr_matrix
    G: np.ndarray
    F: np.ndarray
    gamma: float
    H1: sp.csr_matrix
    tri_weights: np.ndarray
    quad_weights: np.ndarray
    fixed: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    pressure_filter: np.ndarray = None

    @classmethod
    def from_operators(cls, ops, Xi, Q_g, G, F, gamma, fixed=None):
        return cls(
            Xi=Xi,
            B=ops.B,
            Q_g=Q_g,
            E=ops.E,
            G=np.asarray(G, dtype=float),
            F=np.asarray(F, dtype=float),
            gamma=float(gamma),
            H1=ops.M_vec + ops.K_vec,
            tri_weights=ops.tri_weights,
            quad_weights=ops.quad_weights,
            fixed=ops.velocity_dirichlet if fixed is None else np.asarray(fixed, dtype=int),
            pressure_filter=ops.checkerboard,
        )

    @property
    def sizes(self):
        return self.B.shape[0], self.B.shape[1], self.E.shape[0]

    def free_mask(self):
        free = np.ones(self.B.shape[0], dtype=bool)
        free[self.fixed] = False
        return free

    def residuals(self, u, p, q):
        r1 = self.Xi @ u + self.B @ p + self.Q_g @ q - self.F
        r1[self.fixed] = 0.0
        r2 = -(self.B.T @ u)
        r3 = huber.max_residual(self.E @ u, q, self.G, self.gamma)
        return r1, r2, r3

    def relative_residual(self, u, p, q):
        r1, r2, r3 = self.residuals(u, p, q)
        Eu = self.E @ u
        s1 = (
            abs(self.Xi @ u).max()
            + abs(self.B @ p).max()
            + abs(self.Q_g @ q).max()
            + abs(self.F).max()
        )
        s2 = abs(self.B).max() * abs(u).max()
        # the N term keeps the scale meaningful when G vanishes (no yield stress)
        top = max(self.G.max(), huber.triangle_norm(Eu).max()) if self.G.size else 0.0
        s3 = self.gamma * top * max(abs(Eu).max(), abs(q).max())
        parts = [
            abs(r1).max() / s1 if s1 > 0 else abs(r1).max(),
            abs(r2).max() / s2 if s2 > 0 else abs(r2).max(),
            abs(r3).max() / s3 if s3 > 0 else abs(r3).max(),
        ]
        return max(parts)

    def step_norm(self, du, dp, dq):
        """``|du|_{H1,h} + |dp|_{L2,h} + |dq|_{(L2,h)^4}``."""
        nu = np.sqrt(max(du @ (self.H1 @ du), 0.0))
        npr = np.sqrt(np.sum(self.quad_weights * dp * dp))
        nq = np.sqrt(np.sum(np.tile(self.tri_weights, 4) * dq * dq))
        return float(nu + npr + nq)


@dataclass
class SsnState:
    u: np.ndarray
    p: np.ndarray
    q: np.ndarray
    iter: int = 0
    residual_history: list = field(default_factory=list)
    converged: bool = False
    mask: np.ndarray = None

    @classmethod
    def zeros(cls, problem):
        nu, npr, nq = problem.sizes
        return cls(np.zeros(nu), np.zeros(npr), np.zeros(nq))

    def copy(self):
        return SsnState(self.u.copy(), self.p.copy(), self.q.copy())


def newton_step(problem, state, return_system=False):
    """One semismooth Newton correction ``(du, dp, dq)``.

    The projected multiplier is used in the slant derivative of the max
    relation, which keeps the reduced velocity block well conditioned.
    """
    u, p, q = state.u, state.p, state.q
    G, gamma = problem.G, problem.gamma
    strain = problem.E @ u
    r1, r2, r3 = problem.residuals(u, p, q)
    mask = huber.active_mask(strain, G, gamma)
    S = huber.build_newton_S(strain, q, G, gamma, problem.E, mask=mask, projected=True)
    mx = np.tile(np.maximum(G, gamma * huber.triangle_norm(strain)), 4)
    degenerate = mx <= 0
    inv = np.divide(1.0, mx, out=np.zeros_like(mx), where=~degenerate)
    Dinv = sp.diags(inv)
    K = problem.Xi - problem.Q_g @ Dinv @ S
    rhs_u = -r1 + problem.Q_g @ (inv * r3)
    rhs_p = r2
    system = SaddleSystem(
        A_block=K,
        B_block=problem.B,
        rhs_u=rhs_u,
        rhs_p=rhs_p,
        mean_constraint=problem.quad_weights,
        fixed=problem.fixed,
        extra_constraints=problem.pressure_filter,
    )
    du, dp = solve_saddle(system)
    dq = inv * (-r3 - S @ du)
    # triangles with zero yield and zero strain: multiplier is pinned to 0
    dq[degenerate] = -q[degenerate]
    if return_system:
        return du, dp, dq, mask, system
    return du, dp, dq, mask


def ssn_solve(problem, init=None, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, callback=None):
    """Iterate :func:`newton_step` until the step norm drops to ``tol``.

    The iteration also stops when the updated iterate solves the system to
    round-off (``RESIDUAL_CERTIFICATE``), which happens after a single step
    whenever the system is affine, e.g. without yield stress.

    Raises :class:`MaxIterationsExceeded` carrying the step-norm history.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    state = SsnState.zeros(problem) if init is None else init.copy()
    nu, npr, nq = problem.sizes
    if state.u.shape != (nu,) or state.p.shape != (npr,) or state.q.shape != (nq,):
        raise ValueError("initial state does not match the problem dimensions")
    history = []
    for it in range(1, max_iter + 1):
        du, dp, dq, _ = newton_step(problem, state)
        state.u = state.u + du
        state.p = state.p + dp
        state.q = state.q + dq
        delta = problem.step_norm(du, dp, dq)
        history.append(delta)
        if callback is not None:
            callback(it, state, delta)
        if not np.isfinite(delta):
            break
        if delta <= tol or problem.relative_residual(state.u, state.p, state.q) <= RESIDUAL_CERTIFICATE:
            state.iter = it
            state.residual_history = history
            state.converged = True
            state.mask = huber.active_mask(problem.E @ state.u, problem.G, problem.gamma)
            return state
    raise MaxIterationsExceeded(
        f"no convergence in {max_iter} iterations (last step norm {history[-1]:.3e})", history
    )
