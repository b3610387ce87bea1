"""Discrete-time ellipsoidal set-membership observer for the weakly
unobservable block: reachable-set propagation, measurement update, and the
per-step parameter selectors alpha_k, beta_k, gamma_k.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import (DegenerateInputError, InvalidParameterError,
                     SingularInnovationError, SingularNoiseError)
from .numerics import (expm, golden_section, is_spd, min_eigval,
                       simpson_matrix, spectral_norm, symmetrize)

#: clip applied when the closed-form alpha degenerates to an endpoint
ALPHA_CLIP = 1e-9

#: search interval for the beta line search
BETA_LO, BETA_HI = 1e-6, 1.0 - 1e-6


@dataclass
class WeakState:
    """Ellipsoidal estimate E(x2hat, P2hat) of the x2 block at step k."""

    x2hat: np.ndarray
    P2hat: np.ndarray
    k: int = 0
    t_k: float = 0.0

    def __post_init__(self):
        self.x2hat = np.atleast_1d(np.asarray(self.x2hat, dtype=float)).ravel()
        self.P2hat = np.atleast_2d(np.asarray(self.P2hat, dtype=float))
        n2 = self.x2hat.shape[0]
        if self.P2hat.shape != (n2, n2):
            raise InvalidParameterError("P2hat must be n2 x n2")
        if not (np.all(np.isfinite(self.x2hat))
                and np.all(np.isfinite(self.P2hat))):
            raise InvalidParameterError("weak-observer state must be finite")
        if n2 and not is_spd(self.P2hat):
            raise InvalidParameterError("P2hat must be SPD")
        self.P2hat = symmetrize(self.P2hat)


@dataclass
class StepInputs:
    """Per-step data on the quadrature grid of [t_{k-1}, t_k].

    All sample arrays share the leading axis (substeps + 1 nodes, endpoints
    included).  ``Kw_samples`` holds one SPD shape matrix per node.
    """

    x1hat_samples: np.ndarray  # (m+1, n1)
    eps1_samples: np.ndarray   # (m+1,)
    cw_samples: np.ndarray     # (m+1, n_w)
    Kw_samples: np.ndarray     # (m+1, n_w, n_w)
    y_k: np.ndarray

    def __post_init__(self):
        self.x1hat_samples = np.atleast_2d(
            np.asarray(self.x1hat_samples, dtype=float))
        self.eps1_samples = np.asarray(self.eps1_samples, dtype=float).ravel()
        self.cw_samples = np.atleast_2d(np.asarray(self.cw_samples, dtype=float))
        self.Kw_samples = np.asarray(self.Kw_samples, dtype=float)
        self.y_k = np.asarray(self.y_k, dtype=float).ravel()
        m1 = self.eps1_samples.shape[0]
        if (self.x1hat_samples.shape[0] != m1
                or self.cw_samples.shape[0] != m1
                or self.Kw_samples.shape[0] != m1):
            raise InvalidParameterError("step-input sample grids are misaligned")
        if np.any(self.eps1_samples <= 0.0):
            raise InvalidParameterError("eps1 samples must be positive")


def gamma_terms(Kw_k: np.ndarray, eps1_k: float, n1: int
                ) -> tuple[float, float]:
    """(gamma, gamma/(gamma-1)) for the trace-minimizing stacking gain.

    gamma = 1 + s with s = sqrt(tr Kw / (n1 eps1^2)).  Both factors are
    formed from s directly so that an enormous eps1 (s underflowing toward
    zero) still yields a finite, correct gamma/(gamma-1) = 1 + 1/s.
    """
    if eps1_k <= 0.0:
        raise InvalidParameterError("eps1_k must be positive")
    tw = float(np.trace(np.atleast_2d(Kw_k)))
    if tw <= 0.0 or n1 <= 0:
        raise DegenerateInputError("gamma_terms needs positive traces")
    s = float(np.sqrt(tw / n1) / eps1_k)
    if s <= 0.0:
        raise DegenerateInputError("stacking ratio underflowed to zero")
    return 1.0 + s, 1.0 + 1.0 / s


def gamma_k(Kw_k: np.ndarray, eps1_k: float, n1: int) -> float:
    """Trace-minimizing stacking gain for the combined (x1, w) input bound."""
    return gamma_terms(Kw_k, eps1_k, n1)[0]


def build_Ku(gamma, eps1_t: float, Kw_t: np.ndarray,
             n1: int) -> np.ndarray:
    """Shape of the combined input bound: diag(g e1^2 I, g/(g-1) Kw).

    ``gamma`` is either the plain gain or the (gamma, gamma/(gamma-1)) pair
    from :func:`gamma_terms`; pass the pair when eps1 is large enough for
    gamma - 1 to underflow.
    """
    if isinstance(gamma, tuple):
        g1, g2 = gamma
    else:
        g1 = float(gamma)
        if g1 <= 1.0:
            raise InvalidParameterError("build_Ku requires gamma > 1")
        g2 = g1 / (g1 - 1.0)
    Kw_t = np.atleast_2d(np.asarray(Kw_t, dtype=float))
    return symmetrize(sla.block_diag(
        g1 * eps1_t ** 2 * np.eye(n1), g2 * Kw_t))


def alpha_k(M2k: np.ndarray, A4: np.ndarray, P2: np.ndarray,
            dt: float) -> float:
    """Trace-minimizing mixing weight for the predicted shape matrix.

    Minimizes tr(e^{A4 dt} P2 e^{A4^T dt} / a + dt M2k / (1-a)) over
    a in (0,1); the minimizer is sqrt(tp) / (sqrt(tp) + sqrt(dt tm)) with
    tp, tm the two traces.  Degenerate endpoints are clipped into (0,1).
    """
    Ed = expm(np.atleast_2d(np.asarray(A4, dtype=float)) * dt)
    tp = float(np.trace(Ed @ np.atleast_2d(P2) @ Ed.T))
    tm = float(np.trace(np.atleast_2d(M2k)))
    if tp < 0.0 or tm < 0.0:
        raise InvalidParameterError("alpha_k traces must be nonnegative")
    if tp == 0.0 and tm == 0.0:
        warnings.warn("alpha_k: both traces vanish; defaulting to 0.5")
        return 0.5
    a = np.sqrt(tp) / (np.sqrt(tp) + np.sqrt(dt * tm))
    return float(np.clip(a, ALPHA_CLIP, 1.0 - ALPHA_CLIP))


def propagate(st: WeakState, dec, inp: StepInputs, dt: float,
              substeps: int) -> tuple[np.ndarray, np.ndarray, float, np.ndarray]:
    """Time update: center by quadrature, shape by the two-term outer bound.

    Returns (x2_pred, P2_pred, alpha_used, M2k).  ``substeps`` is the number
    of Simpson sub-intervals over [t_{k-1}, t_k]; it must be even.
    """
    if dt <= 0.0:
        raise InvalidParameterError("dt must be positive")
    if substeps < 2 or substeps % 2:
        raise InvalidParameterError("substeps must be even and >= 2")
    n2 = st.x2hat.shape[0]
    if inp.eps1_samples.shape[0] != substeps + 1:
        raise InvalidParameterError(
            f"need {substeps + 1} grid samples, got {inp.eps1_samples.shape[0]}")
    A4, B2p = dec.A4, dec.B2p
    n1 = dec.n1
    h = dt / substeps
    Eh = expm(A4 * h)
    # kernels e^{A4 (t_k - tau_j)} = Eh^(m-j), j = 0..m
    kernels = np.empty((substeps + 1, n2, n2))
    P = np.eye(n2)
    for j in range(substeps, -1, -1):
        kernels[j] = P
        P = Eh @ P
    Em = kernels[0]  # Eh^m = e^{A4 dt}

    g = gamma_terms(inp.Kw_samples[-1], float(inp.eps1_samples[-1]), n1)
    u = np.hstack([inp.x1hat_samples, inp.cw_samples])  # (m+1, n1+nw)
    drive = np.einsum("jab,bc,jc->ja", kernels, B2p, u)
    x2_pred = Em @ st.x2hat + simpson_matrix(drive, h)

    KB = np.empty((substeps + 1, n2, n2))
    for j in range(substeps + 1):
        Ku = build_Ku(g, float(inp.eps1_samples[j]), inp.Kw_samples[j], n1)
        KBj = kernels[j] @ B2p
        KB[j] = KBj @ Ku @ KBj.T
    M2k = symmetrize(simpson_matrix(KB, h))

    a = alpha_k(M2k, A4, st.P2hat, dt)
    P2_pred = symmetrize(Em @ st.P2hat @ Em.T / a + dt * M2k / (1.0 - a))
    if n2 and not is_spd(P2_pred):
        raise InvalidParameterError("predicted shape matrix lost definiteness")
    return x2_pred, P2_pred, a, M2k


def gk_matrix(dec, Ku_tk: np.ndarray) -> np.ndarray:
    """Measurement-consistency shape G_k = D2' K_u(t_k) D2'^T."""
    return symmetrize(dec.D2p @ Ku_tk @ dec.D2p.T)


def update_is_informative(dec, Gk: np.ndarray,
                          rank_tol: float = 1e-10) -> bool:
    """False when the update must be skipped: C2 carries no information or
    G_k is singular at the working tolerance."""
    if dec.n2 == 0 or not np.any(np.abs(dec.C2) > 0.0):
        return False
    scale = spectral_norm(Gk)
    return scale > 0.0 and min_eigval(Gk) > rank_tol * scale


def optimize_beta(P2_pred: np.ndarray, C2: np.ndarray, Gk: np.ndarray,
                  tol: float = 1e-8) -> float:
    """Mixing weight minimizing tr of the fused inverse-shape combination.

    The objective b -> tr(((1-b) P^{-1} + b C2^T Gk^{-1} C2)^{-1}) is convex
    on (0,1), so a golden-section search is exact to tolerance.
    """
    P2_pred = np.atleast_2d(np.asarray(P2_pred, dtype=float))
    if not is_spd(P2_pred):
        raise InvalidParameterError("optimize_beta requires SPD P2_pred")
    Gk = np.atleast_2d(np.asarray(Gk, dtype=float))
    if not is_spd(Gk, tol=1e-14 * max(1.0, spectral_norm(Gk))):
        raise SingularNoiseError("G_k is singular; skip the measurement update")
    Pinv = np.linalg.inv(P2_pred)
    CGC = C2.T @ np.linalg.solve(Gk, C2)

    def f(b: float) -> float:
        X = symmetrize((1.0 - b) * Pinv + b * CGC)
        if min_eigval(X) <= 0.0:
            return np.inf
        return float(np.trace(np.linalg.inv(X)))

    return float(golden_section(f, BETA_LO, BETA_HI, tol=tol))


def measurement_update(st_pred: WeakState, dec, inp: StepInputs,
                       beta: float) -> WeakState:
    """Data update with gain O_k; fuses the prediction with the measurement
    set at mixing weight beta."""
    if not 0.0 < beta < 1.0:
        raise InvalidParameterError("beta must lie in (0,1)")
    C2, D2p = dec.C2, dec.D2p
    n1 = dec.n1
    g = gamma_terms(inp.Kw_samples[-1], float(inp.eps1_samples[-1]), n1)
    Ku = build_Ku(g, float(inp.eps1_samples[-1]), inp.Kw_samples[-1], n1)
    Gk = gk_matrix(dec, Ku)
    P_pred = st_pred.P2hat
    S = symmetrize(C2 @ P_pred @ C2.T / (1.0 - beta) + Gk / beta)
    if min_eigval(S) <= 0.0:
        raise SingularInnovationError("innovation matrix is not invertible")
    Ok = P_pred @ C2.T @ np.linalg.inv(S) / (1.0 - beta)
    u_k = np.concatenate([inp.x1hat_samples[-1], inp.cw_samples[-1]])
    innovation = inp.y_k - C2 @ st_pred.x2hat - D2p @ u_k
    x2hat = st_pred.x2hat + Ok @ innovation
    P2hat = symmetrize((np.eye(dec.n2) - Ok @ C2) @ P_pred / (1.0 - beta))
    return WeakState(x2hat=x2hat, P2hat=P2hat, k=st_pred.k, t_k=st_pred.t_k)


def woodbury_shape(P2_pred: np.ndarray, C2: np.ndarray, Gk: np.ndarray,
                   beta: float) -> np.ndarray:
    """Equivalent inverse-combination form of the updated shape matrix."""
    X = symmetrize((1.0 - beta) * np.linalg.inv(P2_pred)
                   + beta * C2.T @ np.linalg.solve(Gk, C2))
    return symmetrize(np.linalg.inv(X))
