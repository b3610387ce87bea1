"""Fusion of the two subsystem set estimates into one ellipsoid over the
full state space.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .ellipsoid import Ellipsoid
from .errors import InvalidParameterError
from .numerics import symmetrize
from .weak import WeakState


@dataclass(frozen=True)
class FusedEstimate:
    """Full-state bounding ellipsoid plus the stacking gain used."""

    ellipsoid: Ellipsoid
    mu: float

    def __post_init__(self):
        # mu = 1 + s with s > 0; for extreme eps1 the float rounding of mu
        # can land exactly on 1, which is still a valid gain record
        if self.mu < 1.0:
            raise InvalidParameterError("fusion gain mu must exceed 1")


def mu_terms(eps1_k: float, P2hat: np.ndarray, n1: int) -> tuple[float, float]:
    """(mu, mu/(mu-1)) for the trace-minimizing stacking gain.

    mu = 1 + s with s = sqrt(tr P2 / (n1 eps1^2)); both factors come from s
    directly so extreme eps1 values cannot underflow mu - 1 to zero.
    """
    t2 = float(np.trace(np.atleast_2d(P2hat)))
    if t2 <= 0.0 or n1 <= 0 or eps1_k <= 0.0:
        raise InvalidParameterError("mu_terms needs positive traces")
    s = float(np.sqrt(t2 / n1) / eps1_k)
    if s <= 0.0:
        raise InvalidParameterError("fusion stacking ratio underflowed")
    return 1.0 + s, 1.0 + 1.0 / s


def optimal_mu(eps1_k: float, P2hat: np.ndarray, n1: int) -> float:
    """Trace-minimizing stacking gain: sqrt(tr P2 / (n1 eps1^2)) + 1."""
    return mu_terms(eps1_k, P2hat, n1)[0]


def fuse(x1hat: np.ndarray, eps1_k: float, st2: WeakState, P1: np.ndarray,
         mu: float | None = None) -> FusedEstimate:
    """Combine E(x1hat, eps1^2 I) and E(x2hat, P2hat) into E(xhat, Phat).

    xhat = P1^{-1} col(x1hat, x2hat) and Phat = P1^{-1} diag(mu eps1^2 I,
    mu/(mu-1) P2hat) P1^{-T}; any mu > 1 preserves containment, the default
    is the trace-optimal value.
    """
    x1hat = np.atleast_1d(np.asarray(x1hat, dtype=float)).ravel()
    P1 = np.atleast_2d(np.asarray(P1, dtype=float))
    n1 = x1hat.shape[0]
    n2 = st2.x2hat.shape[0]
    if eps1_k <= 0.0:
        raise InvalidParameterError("eps1_k must be positive")
    if P1.shape != (n1 + n2, n1 + n2):
        raise InvalidParameterError("P1 dimension mismatch")
    if n2 == 0:
        # nothing to stack: the x1 ellipsoid is already the full estimate
        Pinv = np.linalg.inv(P1)
        K = symmetrize(Pinv @ (eps1_k ** 2 * np.eye(n1)) @ Pinv.T)
        return FusedEstimate(
            ellipsoid=Ellipsoid(Pinv @ x1hat, K), mu=np.inf)
    if mu is None:
        mu, mu2 = mu_terms(eps1_k, st2.P2hat, n1)
    else:
        if mu <= 1.0:
            raise InvalidParameterError("fusion gain mu must exceed 1")
        mu2 = mu / (mu - 1.0)
    Pinv = np.linalg.inv(P1)
    center = Pinv @ np.concatenate([x1hat, st2.x2hat])
    K = sla.block_diag(mu * eps1_k ** 2 * np.eye(n1), mu2 * st2.P2hat)
    shape = symmetrize(Pinv @ K @ Pinv.T)
    return FusedEstimate(ellipsoid=Ellipsoid(center, shape), mu=float(mu))
