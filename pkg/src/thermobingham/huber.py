"""Huber-regularized constitutive relation on the triangles.

All functions act on block vectors of length ``4m`` (four strain components
per triangle, blocked by component) and per-triangle vectors of length ``m``.
The relation solved for the multiplier ``q`` is

    max(G_T, gamma * |Eu|_T) * q_T = gamma * G_T * (Eu)_T

on every triangle ``T``.
"""
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .assembly import yield_on_triangles  # noqa: F401  (re-exported)


@dataclass(frozen=True)
class RegularizationParams:
    gamma: float = 1e3

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")


def _blocks(q):
    q = np.asarray(q, dtype=float)
    if q.ndim != 1 or q.size % 4:
        raise ValueError(f"length must be a multiple of 4, got {q.shape}")
    return q.reshape(4, -1)


def triangle_norm(q):
    """Euclidean norm of the four components on each triangle (length m)."""
    b = _blocks(q)
    return np.sqrt(np.einsum("at,at->t", b, b))


def norm_N(q):
    """Per-triangle norm replicated over the four component blocks (length 4m)."""
    return np.tile(triangle_norm(q), 4)


def max_residual(strain, q, G, gamma):
    """``max(G, gamma N(strain)) * q - gamma G * strain`` with ``strain = E u``."""
    N = triangle_norm(strain)
    mx = np.maximum(G, gamma * N)
    return (mx * _blocks(q) - gamma * G * _blocks(strain)).ravel()


def solve_multiplier(strain, G, gamma):
    """Multiplier that zeroes :func:`max_residual` for the given strain."""
    N = triangle_norm(strain)
    mx = np.maximum(G, gamma * N)
    scale = np.divide(gamma * G, mx, out=np.zeros_like(mx), where=mx > 0)
    return (scale * _blocks(strain)).ravel()


def active_mask(strain, G, gamma):
    """1 where ``gamma |Eu|_T >= G_T`` (yielded), else 0."""
    return (gamma * triangle_norm(strain) >= G).astype(np.int8)


def slant_norm_derivative(w):
    """Slant derivative of :func:`norm_N` at ``w`` as a sparse 4m x 4m matrix.

    Every block row equals ``diag(1/N) [D(w1) D(w2) D(w3) D(w4)]``; rows of
    triangles with ``N = 0`` are zero.
    """
    b = _blocks(w)
    m = b.shape[1]
    N = np.sqrt(np.einsum("at,at->t", b, b))
    inv = np.divide(1.0, N, out=np.zeros_like(N), where=N > 0)
    t = np.arange(m)
    rows = np.concatenate([np.tile(a * m + t, 4) for a in range(4)])
    cols = np.tile(np.concatenate([c * m + t for c in range(4)]), 4)
    vals = np.tile(np.concatenate([b[c] * inv for c in range(4)]), 4)
    return sp.csr_matrix((vals, (rows, cols)), shape=(4 * m, 4 * m))


def project_multiplier(q, G):
    """Radially scale ``q`` onto ``{N(q)_T <= G_T}`` triangle by triangle."""
    b = _blocks(q)
    N = np.sqrt(np.einsum("at,at->t", b, b))
    G = np.asarray(G, dtype=float)
    over = N > G
    s = np.ones_like(N)
    s[over] = G[over] / N[over]
    out = b * s
    # guard the last ulp so the bound holds exactly
    N2 = np.sqrt(np.einsum("at,at->t", out, out))
    bad = N2 > G
    if np.any(bad):
        out[:, bad] *= np.nextafter(G[bad] / N2[bad], 0.0)
    return out.ravel()


def build_newton_S(strain, q, G, gamma, E, mask=None, projected=True):
    """Slant derivative of the max relation with respect to ``u``.

    ``gamma * (chi diag(q) N_w(Eu) - diag(G)) E``; with ``projected=True`` the
    multiplier is first projected onto the feasible set, which is the variant
    used inside the Newton iteration.
    """
    if mask is None:
        mask = active_mask(strain, G, gamma)
    qq = project_multiplier(q, G) if projected else np.asarray(q, dtype=float)
    chi = np.tile(np.asarray(mask, dtype=float), 4)
    J = sp.diags(chi * qq) @ slant_norm_derivative(strain)
    return (gamma * (J - sp.diags(np.tile(G, 4)))) @ E
