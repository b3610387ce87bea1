"""Shared numerical kernels: matrix exponentials, rank decisions, quadrature.

Every matrix exponential in the library goes through :func:`expm` so that
discretization caches and error envelopes are mutually consistent.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla
from scipy.integrate import simpson as _simpson

EPS = float(np.finfo(float).eps)


def expm(A: np.ndarray) -> np.ndarray:
    """Matrix exponential (scaling-and-squaring with diagonal Pade)."""
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        return np.zeros_like(A)
    return sla.expm(A)


def zoh(A: np.ndarray, B: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray]:
    """Exact zero-order-hold discretization of ``dx = Ax + Bu`` over step h.

    Returns (Ad, Bd) with Ad = e^{Ah} and Bd = int_0^h e^{As} ds B, computed
    from one exponential of the augmented block matrix.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    n, m = A.shape[0], B.shape[1]
    if n == 0:
        return A.copy(), B.copy()
    M = np.zeros((n + m, n + m))
    M[:n, :n] = A * h
    M[:n, n:] = B * h
    E = expm(M)
    return E[:n, :n], E[:n, n:]


def spectral_norm(A: np.ndarray) -> float:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.size == 0:
        return 0.0
    return float(np.linalg.norm(A, 2))


def symmetrize(K: np.ndarray) -> np.ndarray:
    return 0.5 * (K + K.T)


def min_eigval(K: np.ndarray) -> float:
    if K.size == 0:
        return np.inf
    return float(np.linalg.eigvalsh(symmetrize(K))[0])


def is_spd(K: np.ndarray, tol: float = 0.0) -> bool:
    K = np.atleast_2d(np.asarray(K, dtype=float))
    if K.shape[0] != K.shape[1]:
        return False
    if not np.allclose(K, K.T, rtol=1e-8, atol=1e-8 * (1.0 + spectral_norm(K))):
        return False
    return min_eigval(K) > tol


def default_rank_tol(M: np.ndarray, smax: float) -> float:
    """Conventional numerical-rank cutoff: max(m,n) * eps * sigma_max."""
    return max(M.shape) * EPS * smax


def numerical_rank(M: np.ndarray, rank_tol: float | None = None) -> int:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    if rank_tol is None:
        rank_tol = default_rank_tol(M, s[0] if s.size else 0.0)
    return int(np.sum(s > rank_tol))


def null_basis(M: np.ndarray, rank_tol: float | None = None) -> np.ndarray:
    """Orthonormal basis of the null space (columns)."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[1] == 0:
        return np.zeros((0, 0))
    if M.shape[0] == 0 or not np.any(M):
        return np.eye(M.shape[1])
    _, s, vt = np.linalg.svd(M)
    if rank_tol is None:
        rank_tol = default_rank_tol(M, s[0])
    r = int(np.sum(s > rank_tol))
    return vt[r:].T


def range_basis(M: np.ndarray, scale: float = 0.0,
                rank_tol: float | None = None) -> np.ndarray:
    """Orthonormal basis of the column space.

    ``scale`` sets the magnitude against which rank is judged; pass 1.0 when
    M holds sub-rows of unit vectors, whose honest columns may be small while
    spurious ones sit at machine epsilon.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[1] == 0 or M.size == 0:
        return np.zeros((M.shape[0], 0))
    u, s, _ = np.linalg.svd(M, full_matrices=False)
    if rank_tol is None:
        ref = max(scale, s[0] if s.size else 0.0)
        rank_tol = default_rank_tol(M, ref)
    r = int(np.sum(s > rank_tol))
    return u[:, :r]


def canonical_basis(V: np.ndarray) -> np.ndarray:
    """Deterministic orthonormal basis of span(V).

    Built from the subspace projector via pivoted QR, then sign-fixed and
    ordered by each column's dominant coordinate.  Coordinate-aligned
    subspaces come out as sorted signed unit vectors, which keeps the
    decomposition of already-triangular systems literal.
    """
    V = np.atleast_2d(np.asarray(V, dtype=float))
    n, r = V.shape
    if r == 0:
        return np.zeros((n, 0))
    P = V @ V.T
    Q, _, _ = sla.qr(P, pivoting=True)
    B = Q[:, :r].copy()
    lead = np.empty(r, dtype=int)
    for j in range(r):
        i = int(np.argmax(np.abs(B[:, j])))
        if B[i, j] < 0:
            B[:, j] = -B[:, j]
        lead[j] = i
    B = B[:, np.argsort(lead, kind="stable")]
    # snap exact-coordinate bases free of roundoff dust
    B[np.abs(B) < 1e2 * EPS] = 0.0
    nrm = np.linalg.norm(B, axis=0)
    return B / nrm


def simpson(y: np.ndarray, dx: float) -> float:
    """Composite Simpson integral of samples ``y`` at uniform spacing."""
    y = np.asarray(y, dtype=float)
    if y.shape[-1] < 2:
        return 0.0
    return float(_simpson(y, dx=dx, axis=-1))


def simpson_matrix(Y: np.ndarray, dx: float) -> np.ndarray:
    """Composite Simpson integral of a sampled matrix path Y[j] -> int Y dt."""
    Y = np.asarray(Y, dtype=float)
    if Y.shape[0] < 2:
        return np.zeros(Y.shape[1:])
    return _simpson(Y, dx=dx, axis=0)


def golden_section(f, lo: float, hi: float, tol: float = 1e-8,
                   flat_tol: float = 1e-12):
    """Minimize a scalar unimodal function on [lo, hi].

    Returns the midpoint of the final bracket.  A flat objective (relative
    variation below ``flat_tol`` at the initial probes) short-circuits to the
    interval midpoint.
    """
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = float(lo), float(hi)
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    ref = max(abs(fc), abs(fd), 1.0)
    if abs(fc - fd) <= flat_tol * ref and abs(f(a) - f(b)) <= flat_tol * ref:
        return 0.5 * (lo + hi)
    while (b - a) > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def unit_ball_volume(n: int) -> float:
    from math import gamma, pi
    return pi ** (n / 2.0) / gamma(n / 2.0 + 1.0)


def norm_envelope_grid(A: np.ndarray, h: float, decay_floor: float = 1e-6,
                       t_max: float = 1e4, shift: float = 0.0
                       ) -> tuple[np.ndarray, np.ndarray]:
    """Samples of ||e^{At}|| on [0, T] at spacing h.

    T is extended (by doubling) until ||e^{At}|| e^{-shift t} has decayed
    below ``decay_floor`` relative to its peak, or t_max is hit.  Returns
    (ts, norms) with the *uncompensated* norms.  The stopping rule converges
    whenever shift > max Re(eig A).
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape[0] == 0:
        return np.array([0.0]), np.array([1.0])
    T = max(64 * h, 1.0)
    while True:
        ts = np.arange(0.0, T + 0.5 * h, h)
        Eh = expm(A * h)
        norms = np.empty(ts.shape[0])
        P = np.eye(A.shape[0])
        for j in range(ts.shape[0]):
            norms[j] = np.linalg.norm(P, 2)
            P = Eh @ P
        comp = norms * np.exp(-shift * ts)
        if comp[-1] <= decay_floor * comp.max() or T >= t_max:
            return ts, norms
        T *= 2.0


def compensated_sup(A: np.ndarray, shift: float, h: float = 0.01,
                    t_max: float = 1e4) -> float:
    """sup over a sampled grid of ||e^{At}|| e^{-shift t} (shift > max Re eig)."""
    ts, norms = norm_envelope_grid(A, h, t_max=t_max, shift=shift)
    return float(np.max(norms * np.exp(-shift * ts)))
