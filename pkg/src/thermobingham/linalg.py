"""Sparse solves used by every implicit step.

Matrices are :class:`scipy.sparse.csr_matrix`.  Direct solves go through
SuperLU; the SPD path runs it in symmetric mode with diagonal pivoting only,
so the pivots are the ``LDL^T`` pivots and their signs certify definiteness.
"""
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

SOLVE_RTOL = 1e-10


class LinearSolveError(RuntimeError):
    pass


class NonPositivePivot(LinearSolveError):
    pass


class NonConvergence(LinearSolveError):
    pass


class SingularSystem(LinearSolveError):
    pass


def finalize(A):
    """Return ``A`` as CSR with sorted unique column indices and no stored zeros."""
    A = sp.csr_matrix(A)
    A.sum_duplicates()
    A.eliminate_zeros()
    A.sort_indices()
    return A


def _check_residual(A, x, b, rtol, exc):
    res = np.linalg.norm(A @ x - b)
    if not np.isfinite(res) or res > rtol * (np.linalg.norm(b) + 1.0):
        raise exc(f"linear solve residual {res:.3e} above tolerance")


def solve_spd(A, b, method="direct", rtol=SOLVE_RTOL, maxiter=None):
    """Solve ``A x = b`` for symmetric positive definite ``A``.

    ``method="direct"`` factorizes and raises :class:`NonPositivePivot` if a
    pivot is not positive; ``method="cg"`` runs conjugate gradients with a
    Jacobi preconditioner and raises :class:`NonConvergence` on failure.
    """
    A = sp.csc_matrix(A)
    b = np.asarray(b, dtype=float)
    if A.shape[0] != A.shape[1] or A.shape[0] != b.shape[0]:
        raise ValueError(f"shape mismatch: A {A.shape}, b {b.shape}")
    if method == "direct":
        try:
            lu = spla.splu(
                A,
                permc_spec="MMD_AT_PLUS_A",
                diag_pivot_thresh=0.0,
                options={"SymmetricMode": True},
            )
        except RuntimeError as err:
            raise NonPositivePivot(str(err)) from err
        if not np.array_equal(lu.perm_r, lu.perm_c):
            raise NonPositivePivot("factorization left the symmetric pivot order")
        piv = lu.U.diagonal()
        if np.any(piv <= 0) or not np.all(np.isfinite(piv)):
            k = int(np.argmin(piv))
            raise NonPositivePivot(f"pivot {k} is {piv[k]:.3e}")
        x = lu.solve(b)
        _check_residual(A, x, b, rtol, NonPositivePivot)
        return x
    if method == "cg":
        d = A.diagonal()
        if np.any(d <= 0):
            raise NonPositivePivot("non-positive diagonal entry")
        M = sp.diags(1.0 / d)
        # cg measures ||r|| <= rtol * ||b||; tighten so the +1 slack is never needed
        x, info = spla.cg(A, b, rtol=0.01 * rtol, atol=0.0, M=M, maxiter=maxiter or 10 * A.shape[0])
        if info != 0:
            raise NonConvergence(f"cg stopped with info={info}")
        _check_residual(A, x, b, rtol, NonConvergence)
        return x
    raise ValueError(f"unknown method {method!r}")


def solve_general(A, b):
    """Sparse LU with partial pivoting for a square nonsymmetric system."""
    A = sp.csc_matrix(A)
    try:
        x = spla.splu(A).solve(np.asarray(b, dtype=float))
    except RuntimeError as err:
        raise SingularSystem(str(err)) from err
    if not np.all(np.isfinite(x)):
        raise SingularSystem("non-finite solution")
    return x


@dataclass
class SaddleSystem:
    """``[[A, B], [B^T, 0]] (u, p) = (rhs_u, rhs_p)`` with ``mean_constraint . p = 0``.

    ``extra_constraints`` (k x l) adds further homogeneous pressure constraints,
    each with its own Lagrange multiplier.  ``fixed`` lists velocity unknowns held at the values in ``fixed_values``
    (zero by default); they are eliminated row and column with a unit diagonal.
    """

    A_block: sp.spmatrix
    B_block: sp.spmatrix
    rhs_u: np.ndarray
    rhs_p: np.ndarray
    mean_constraint: np.ndarray
    fixed: np.ndarray = None
    fixed_values: np.ndarray = None
    extra_constraints: np.ndarray = None

    def __post_init__(self):
        nu, npr = self.B_block.shape
        if self.A_block.shape != (nu, nu):
            raise ValueError("A_block and B_block disagree on the velocity size")
        if len(self.rhs_u) != nu or len(self.rhs_p) != npr or len(self.mean_constraint) != npr:
            raise ValueError("right-hand side or constraint length mismatch")
        if np.any(np.asarray(self.mean_constraint) <= 0):
            raise ValueError("mean constraint weights must be positive")
        if self.extra_constraints is not None and np.shape(self.extra_constraints)[-1] != npr:
            raise ValueError("extra constraint rows must have one entry per pressure unknown")

    def constraints(self):
        rows = [np.asarray(self.mean_constraint, dtype=float)]
        if self.extra_constraints is not None:
            rows.extend(np.atleast_2d(np.asarray(self.extra_constraints, dtype=float)))
        return np.vstack(rows)


def eliminate_fixed(A, rhs, fixed, values=None, coupling=None, rhs_c=None):
    """Row/column elimination of prescribed unknowns with a unit diagonal.

    Returns the modified ``A`` and ``rhs``; if a coupling block ``coupling``
    (rows = unknowns of ``A``) is given, its fixed rows are zeroed and
    ``rhs_c`` is corrected for the eliminated values.
    """
    n = A.shape[0]
    fixed = np.asarray(fixed, dtype=int)
    vals = np.zeros(len(fixed)) if values is None else np.asarray(values, dtype=float)
    xf = np.zeros(n)
    xf[fixed] = vals
    rhs = np.asarray(rhs, dtype=float) - A @ xf
    keep = np.ones(n)
    keep[fixed] = 0.0
    K = sp.diags(keep)
    unit = np.zeros(n)
    unit[fixed] = 1.0
    A = finalize(K @ A @ K + sp.diags(unit))
    rhs[fixed] = vals
    if coupling is None:
        return A, rhs
    rhs_c = np.asarray(rhs_c, dtype=float) - coupling.T @ xf
    return A, rhs, finalize(K @ coupling), rhs_c


def saddle_matrix(A, B, constraints):
    """Assemble ``[[A, B, 0], [B^T, 0, C^T], [0, C, 0]]`` for constraint rows ``C``."""
    C = sp.csr_matrix(np.atleast_2d(np.asarray(constraints, dtype=float)))
    return sp.bmat([[A, B, None], [B.T, None, C.T], [None, C, None]], format="csc")


def independent_rows(C, rtol=1e-10):
    """Subset of the rows of ``C`` that is linearly independent and spans the
    same space (e.g. on a single quad the checkerboard row repeats the mean row)."""
    from scipy.linalg import qr

    C = np.atleast_2d(np.asarray(C, dtype=float))
    _, R, piv = qr(C.T, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    rank = int(np.sum(d > rtol * d[0])) if d.size and d[0] > 0 else 0
    return C[np.sort(piv[:rank])]


def solve_saddle(system):
    """Solve a :class:`SaddleSystem`; returns ``(u, p)``.

    The pressure constraints enter as Lagrange multiplier rows/columns.  The
    system is solved exactly, but through a factorization without the dense
    constraint rows: one pressure per constraint is pinned, and the pinned
    factor is reused to recover the multipliers and the kernel shift (see
    :func:`_solve_bordered`).  If that route fails, the full bordered matrix
    is factorized directly.
    """
    A = sp.csr_matrix(system.A_block)
    B = sp.csr_matrix(system.B_block)
    rhs_u = np.asarray(system.rhs_u, dtype=float)
    rhs_p = np.asarray(system.rhs_p, dtype=float)
    if system.fixed is not None and len(system.fixed):
        A, rhs_u, B, rhs_p = eliminate_fixed(
            A, rhs_u, system.fixed, system.fixed_values, coupling=B, rhs_c=rhs_p
        )
    nu, npr = B.shape
    C = independent_rows(system.constraints())
    K = saddle_matrix(A, B, C)
    rhs = np.concatenate([rhs_u, rhs_p, np.zeros(C.shape[0])])
    tol = 1e-9 * (np.linalg.norm(rhs) + 1.0) * max(1.0, _scale(K))
    x = None
    try:
        x = _solve_bordered(A, B, C, rhs_u, rhs_p)
    except (SingularSystem, np.linalg.LinAlgError):
        pass
    if x is None or not np.linalg.norm(K @ x - rhs) <= tol:
        x = solve_general(K, rhs)
    res = np.linalg.norm(K @ x - rhs)
    if res > tol:
        raise SingularSystem(f"saddle residual {res:.3e}")
    return x[:nu], x[nu:nu + npr]


def _solve_bordered(A, B, C, rhs_u, rhs_p):
    """Exact solution of ``[[A, B, 0], [B^T, 0, C^T], [0, C, 0]]`` via pinning.

    ``k`` pressures ``P`` (chosen by pivoted QR of ``C``) are removed together
    with their divergence rows.  With the pinned factor, the general solution
    is ``x0 - sum lam_i y_i + sum c_j w_j``, where ``y_i`` answer the
    multiplier columns and ``w_j`` the removed pressure columns.  The ``2k``
    coefficients then follow from the removed rows and ``C p = 0``.
    """
    from scipy.linalg import qr

    nu, npr = B.shape
    k = C.shape[0]
    _, _, piv = qr(C, mode="economic", pivoting=True)
    P = np.sort(piv[:k])
    R = np.setdiff1d(np.arange(npr), P)
    BR = B[:, R]
    Kp = sp.bmat([[A, BR], [BR.T, None]], format="csc")
    try:
        lu = spla.splu(Kp)
    except RuntimeError as err:
        raise SingularSystem(str(err)) from err
    nr = len(R)
    rhs = np.empty((nu + nr, 1 + 2 * k))
    rhs[:, 0] = np.concatenate([rhs_u, rhs_p[R]])
    for i in range(k):
        rhs[:, 1 + i] = np.concatenate([np.zeros(nu), C[i, R]])
    BP = B[:, P].toarray()
    for j in range(k):
        rhs[:, 1 + k + j] = np.concatenate([-BP[:, j], np.zeros(nr)])
    sol = lu.solve(rhs)
    if not np.all(np.isfinite(sol)):
        raise SingularSystem("non-finite pinned solve")

    def full(col, p_pinned):
        u = sol[:nu, col]
        p = np.zeros(npr)
        p[R] = sol[nu:, col]
        p[P] = p_pinned
        return u, p

    u0, p0 = full(0, np.zeros(k))
    ys = [full(1 + i, np.zeros(k)) for i in range(k)]
    ws = [full(1 + k + j, np.eye(k)[j]) for j in range(k)]
    # unknowns (lam, c): removed divergence rows and the constraints
    BtP = B[:, P].T
    M = np.zeros((2 * k, 2 * k))
    r = np.zeros(2 * k)
    r[:k] = rhs_p[P] - BtP @ u0
    r[k:] = -(C @ p0)
    for i, (yu, yp) in enumerate(ys):
        M[:k, i] = -(BtP @ yu) + C[i, P]
        M[k:, i] = -(C @ yp)
    for j, (wu, wp) in enumerate(ws):
        M[:k, k + j] = BtP @ wu
        M[k:, k + j] = C @ wp
    coef = np.linalg.solve(M, r)
    lam, c = coef[:k], coef[k:]
    u = u0 - sum(l * yu for l, (yu, _) in zip(lam, ys)) + sum(cj * wu for cj, (wu, _) in zip(c, ws))
    p = p0 - sum(l * yp for l, (_, yp) in zip(lam, ys)) + sum(cj * wp for cj, (_, wp) in zip(c, ws))
    return np.concatenate([u, p, lam])


def _scale(K):
    return float(abs(K).max())


def write_matrix_market(A, path, comment=None):
    """Export ``A`` as 1-based ``row col value`` triplets after a header."""
    A = sp.coo_matrix(A)
    order = np.lexsort((A.col, A.row))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("%%MatrixMarket matrix coordinate real general\n")
        if comment:
            for line in str(comment).splitlines():
                fh.write(f"% {line}\n")
        fh.write(f"{A.shape[0]} {A.shape[1]} {A.nnz}\n")
        for k in order:
            fh.write(f"{A.row[k] + 1} {A.col[k] + 1} {A.data[k]:.17g}\n")


def read_matrix_market(path):
    """Inverse of :func:`write_matrix_market` (for inspection and tests)."""
    rows, cols, vals = [], [], []
    shape = None
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("%"):
                continue
            parts = line.split()
            if shape is None:
                shape = (int(parts[0]), int(parts[1]))
                continue
            rows.append(int(parts[0]) - 1)
            cols.append(int(parts[1]) - 1)
            vals.append(float(parts[2]))
    return sp.csr_matrix((vals, (rows, cols)), shape=shape)
