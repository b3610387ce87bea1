"""Boundedness certificates for the weak-observer shape matrix and the fused
estimate: scalar envelopes f, q, p2 bounding the shape recursion, the
windowed-Grammian alternative for insufficiently stable blocks, and the
resulting uniform matrix bounds on the fused shape.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import (CaseNotApplicableError, CertificateUnavailableError,
                     InvalidParameterError)
from .numerics import (compensated_sup, expm, min_eigval, simpson_matrix,
                       spectral_norm, symmetrize)

#: series switch-over for the (e^x - 1)/x factor
_EXPM1_SERIES_CUTOFF = 1e-4


def expm1_over_x(x: float) -> float:
    """(e^x - 1)/x, series-evaluated near zero for stability."""
    if abs(x) < _EXPM1_SERIES_CUTOFF:
        return 1.0 + x / 2.0 + x * x / 6.0
    return float(np.expm1(x) / x)


@dataclass(frozen=True)
class AssumptionConstants:
    """Declared or harvested uniform bounds on the per-step parameters.

    ``source`` records how the constants were obtained: "declared" for
    user-supplied values, "harvested" for pilot-run extremes with margin.
    """

    alpha_lo: float
    alpha_hi: float
    beta_lo: float
    beta_hi: float
    w_lo: float
    w_hi: float
    source: str = "declared"

    def __post_init__(self):
        if not (0.0 < self.alpha_lo <= self.alpha_hi < 1.0):
            raise InvalidParameterError("alpha bounds must satisfy 0<lo<=hi<1")
        if not (0.0 <= self.beta_lo <= self.beta_hi < 1.0):
            raise InvalidParameterError("beta bounds must satisfy 0<=lo<=hi<1")
        if not (0.0 <= self.w_lo <= self.w_hi):
            raise InvalidParameterError("w bounds must be ordered and >= 0")


@dataclass
class CertificateReport:
    """All scalar certificate quantities plus the case actually used."""

    alpha_lo: float
    alpha_hi: float
    beta_lo: float
    beta_hi: float
    w_lo: float
    w_hi: float
    eps1_lo: float
    eps1_hi: float
    gamma1_lo: float = np.nan
    gamma1_hi: float = np.nan
    gamma2_lo: float = np.nan
    gamma2_hi: float = np.nan
    b2: float = np.nan
    c2: float = np.nan
    d2: float = np.nan
    lambda2_hi: float = np.nan
    a2_hi: float = np.nan
    lambda2_lo: float = np.nan
    a2_lo: float = np.nan
    kappa1: float = np.nan
    kappa2: float = np.nan
    f_bar: float = np.nan
    q_bar: float = np.nan
    q_lo: float = np.nan
    p2_lo: float = np.nan
    p2_hi_seq: list = field(default_factory=list)
    p2_hi: float = np.nan
    rho_lo: float = np.nan
    r: int = 0
    phi: float = np.nan
    mu1_lo: float = np.nan
    mu1_hi: float = np.nan
    mu2_lo: float = np.nan
    mu2_hi: float = np.nan
    P_lo: np.ndarray | None = None
    P_hi: np.ndarray | None = None
    sufficient_stability_margin: float = np.nan
    case: str = "none"
    reason: str = ""

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("P_lo", "P_hi"):
            if d[key] is not None:
                d[key] = np.asarray(d[key]).tolist()
        d["p2_hi_seq"] = [float(v) for v in d["p2_hi_seq"]]
        for k, v in list(d.items()):
            if isinstance(v, (np.floating, np.integer)):
                d[k] = float(v)
        return d


def gamma_bounds(const: AssumptionConstants, eps1_lo: float, eps1_hi: float,
                 n1: int, n_w: int) -> tuple[float, float, float, float]:
    """Uniform bounds on the stacking gain and its conjugate factor.

    gamma_k = sqrt(tr Kw / (n1 eps1^2)) + 1 is monotone in tr Kw and
    anti-monotone in eps1; gamma/(gamma-1) is decreasing in gamma.
    """
    if eps1_lo <= 0.0 or eps1_hi < eps1_lo:
        raise InvalidParameterError("eps1 bounds must be positive and ordered")
    if const.w_lo <= 0.0:
        raise InvalidParameterError("gamma bounds need w_lo > 0")
    s_lo = np.sqrt(n_w * const.w_lo) / (np.sqrt(n1) * eps1_hi)
    s_hi = np.sqrt(n_w * const.w_hi) / (np.sqrt(n1) * eps1_lo)
    # gamma = 1 + s, so gamma/(gamma-1) = 1 + 1/s, computed without
    # cancellation even when s underflows next to 1
    return float(1.0 + s_lo), float(1.0 + s_hi), \
        float(1.0 + 1.0 / s_hi), float(1.0 + 1.0 / s_lo)


def exponential_envelopes(A4: np.ndarray, margin_scale: float = 0.05,
                          safety_k: float = 1.05
                          ) -> tuple[float, float, float, float]:
    """Rate/amplitude envelopes for e^{A4 t} and e^{-A4 t}.

    Returns (lambda2_hi, a2_hi, lambda2_lo, a2_lo) with
    ||e^{A4 t}|| <= a2_hi e^{lambda2_hi t} and
    ||e^{-A4 t}|| <= a2_lo e^{lambda2_lo t} on the sampled grid.  The rates
    sit a margin above the respective spectral abscissas so the amplitude
    suprema are finite.
    """
    A4 = np.atleast_2d(np.asarray(A4, dtype=float))
    if A4.shape[0] == 0:
        return 0.0, 1.0, 0.0, 1.0
    lam = np.linalg.eigvals(A4)
    rate_hi = float(np.max(lam.real))
    margin = margin_scale * (1.0 + abs(rate_hi))
    lambda2_hi = rate_hi + margin
    a2_hi = safety_k * compensated_sup(A4, lambda2_hi)
    rate_lo = float(np.max(-lam.real))
    margin2 = margin_scale * (1.0 + abs(rate_lo))
    lambda2_lo = rate_lo + margin2
    a2_lo = safety_k * compensated_sup(-A4, lambda2_lo)
    return lambda2_hi, a2_hi, lambda2_lo, a2_lo


def grammian_kappa1(A4: np.ndarray, dt: float, substeps: int = 200) -> float:
    """lambda_min of the short-horizon Grammian int_0^dt e^{A4 s} e^{A4^T s} ds."""
    A4 = np.atleast_2d(np.asarray(A4, dtype=float))
    n2 = A4.shape[0]
    if n2 == 0:
        return 0.0
    if substeps % 2:
        substeps += 1
    h = dt / substeps
    Eh = expm(A4 * h)
    samples = np.empty((substeps + 1, n2, n2))
    P = np.eye(n2)
    for j in range(substeps + 1):
        samples[j] = P @ P.T
        P = Eh @ P
    G = symmetrize(simpson_matrix(samples, h))
    return max(min_eigval(G), 0.0)


def _row_space_sigma_min(M: np.ndarray) -> float:
    """sigma such that M M^T >= sigma^2 I; zero for row-rank-deficient M."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0 or M.shape[0] > M.shape[1]:
        return 0.0
    return float(np.linalg.svd(M, compute_uv=False)[-1])


def lemma5_bounds(rep: CertificateReport, dec, dt: float, P20_norm: float,
                  horizon_k: int) -> CertificateReport:
    """Fill in the shape-recursion envelopes f, q (upper), q (lower), the
    per-step upper-bound sequence, and the uniform lower bound p2_lo."""
    lo_prod = min(rep.gamma1_lo * rep.eps1_lo ** 2, rep.gamma2_lo * rep.w_lo)
    hi_prod = max(rep.gamma1_hi * rep.eps1_hi ** 2, rep.gamma2_hi * rep.w_hi)
    rep.b2 = spectral_norm(dec.B2p)
    rep.c2 = spectral_norm(dec.C2)
    rep.d2 = _row_space_sigma_min(dec.D2p)
    rep.kappa1 = grammian_kappa1(dec.A4, dt)
    rep.kappa2 = _row_space_sigma_min(dec.B2p)
    rep.f_bar = rep.a2_hi ** 2 * np.exp(2.0 * rep.lambda2_hi * dt) / rep.alpha_lo
    rep.q_bar = (dt * hi_prod * rep.a2_hi ** 2 * rep.b2 ** 2
                 * dt * expm1_over_x(2.0 * rep.lambda2_hi * dt)
                 / (1.0 - rep.alpha_hi))
    if rep.kappa2 <= 0.0:
        warnings.warn("B2p is row-rank deficient; lower bound q_lo = 0")
        rep.q_lo = 0.0
        rep.p2_lo = 0.0
    else:
        rep.q_lo = (rep.kappa1 * rep.kappa2 ** 2 * dt * lo_prod
                    / (1.0 - rep.alpha_lo))
        denom = (1.0 - rep.beta_lo) / rep.q_lo
        if rep.beta_hi > 0.0:
            denom += rep.beta_hi * rep.c2 ** 2 / (rep.d2 ** 2 * lo_prod)
        rep.p2_lo = 1.0 / denom
    seq = [P20_norm]
    # the affine recursion diverges cleanly to inf when f_bar is large;
    # inf entries simply mean no per-step bound is available there
    with np.errstate(over="ignore"):
        for _ in range(horizon_k):
            seq.append((rep.f_bar * seq[-1] + rep.q_bar)
                       / (1.0 - rep.beta_hi))
    rep.p2_hi_seq = seq
    return rep


def lemma6_uniform_bound(rep: CertificateReport, dt: float) -> float:
    """Uniform upper bound for the sufficiently stable case f < 1 - beta_hi."""
    if not rep.f_bar < 1.0 - rep.beta_hi:
        raise CaseNotApplicableError(
            f"requires f_bar < 1 - beta_hi (f_bar={rep.f_bar:.4g}, "
            f"1-beta_hi={1.0 - rep.beta_hi:.4g})")
    p2_hi = (rep.f_bar * rep.p2_hi_seq[0] / (1.0 - rep.beta_hi)
             + rep.q_bar / (1.0 - rep.beta_hi - rep.f_bar))
    # sufficient-stability condition on the decay rate (reported, not gating)
    rep.sufficient_stability_margin = (
        (np.log(1.0 - rep.beta_hi) + np.log(rep.alpha_lo)
         - 2.0 * np.log(rep.a2_hi)) / (2.0 * dt) - rep.lambda2_hi)
    return float(p2_hi)


def grammian_rho(dec, Gk_seq: list, r: int, dt: float) -> float:
    """Smallest windowed-Grammian eigenvalue over the supplied G_k sequence."""
    if r < 1:
        raise InvalidParameterError("window length r must be >= 1")
    n2 = dec.n2
    if n2 == 0 or not np.any(np.abs(dec.C2) > 0.0):
        return 0.0
    Einv = expm(-np.atleast_2d(dec.A4) * dt)
    terms = []
    for Gi in Gk_seq:
        Gi = np.atleast_2d(np.asarray(Gi, dtype=float))
        scale = spectral_norm(Gi)
        if scale <= 0.0 or min_eigval(Gi) <= 1e-12 * scale:
            warnings.warn("singular G_k excluded from Grammian window")
            terms.append(None)
            continue
        terms.append(dec.C2.T @ np.linalg.solve(Gi, dec.C2))
    rho = np.inf
    for k in range(r, len(terms)):
        S = np.zeros((n2, n2))
        M = np.eye(n2)  # e^{-(k-i) A4 dt} built from newest to oldest
        ok = True
        for step in range(r + 1):
            term = terms[k - step]
            if term is None:
                ok = False
                break
            S += M.T @ term @ M
            M = Einv @ M
        if ok:
            rho = min(rho, min_eigval(symmetrize(S)))
    if not np.isfinite(rho):
        return 0.0
    return max(float(rho), 0.0)


def lemma7_uniform_bound(rep: CertificateReport, rho_lo: float, r: int,
                         dt: float) -> float:
    """Uniform upper bound for the marginal case via the Grammian window."""
    if rep.f_bar < 1.0 - rep.beta_hi:
        raise CaseNotApplicableError("applies only when f_bar >= 1 - beta_hi")
    if rho_lo <= 0.0:
        raise CertificateUnavailableError("Grammian lower bound rho is zero")
    if rep.beta_lo <= 0.0:
        raise CertificateUnavailableError(
            "requires beta_lo > 0 (measurement updates must engage)")
    if rep.p2_lo <= 0.0:
        raise CertificateUnavailableError("requires a positive p2_lo")
    phi = rep.alpha_lo / (1.0 + rep.a2_lo ** 2 * rep.q_bar
                          * np.exp(2.0 * rep.lambda2_lo * dt)
                          * rep.alpha_hi / rep.p2_lo)
    rep.phi = float(phi)
    rep.rho_lo = float(rho_lo)
    rep.r = int(r)
    transient = max(rep.p2_hi_seq[1:r + 1]) if r >= 1 else 0.0
    window = 1.0 / (rep.beta_lo * ((1.0 - rep.beta_hi) * phi) ** r * rho_lo)
    return float(max(transient, window))


def theorem2_bounds(rep: CertificateReport, P1: np.ndarray, n1: int,
                    n2: int) -> tuple[np.ndarray, np.ndarray]:
    """Uniform matrix bounds on the fused shape from the scalar envelopes."""
    if n2 == 0:
        Pinv = np.linalg.inv(np.atleast_2d(P1))
        lo = Pinv @ (rep.eps1_lo ** 2 * np.eye(n1)) @ Pinv.T
        hi = Pinv @ (rep.eps1_hi ** 2 * np.eye(n1)) @ Pinv.T
        return symmetrize(lo), symmetrize(hi)
    if not np.isfinite(rep.p2_hi):
        raise CertificateUnavailableError("no uniform p2 upper bound available")
    if rep.p2_lo <= 0.0:
        raise CertificateUnavailableError("no positive p2 lower bound available")
    Pinv = np.linalg.inv(np.atleast_2d(P1))
    # mu = 1 + s with s the sqrt trace ratio; mu/(mu-1) = 1 + 1/s, computed
    # without cancellation for extreme ratios
    s_lo = np.sqrt(n2 * rep.p2_lo / n1) / rep.eps1_hi
    s_hi = np.sqrt(n2 * rep.p2_hi / n1) / rep.eps1_lo
    mu1_lo, mu1_hi = 1.0 + s_lo, 1.0 + s_hi
    mu2_lo, mu2_hi = 1.0 + 1.0 / s_hi, 1.0 + 1.0 / s_lo
    rep.mu1_lo, rep.mu1_hi = float(mu1_lo), float(mu1_hi)
    rep.mu2_lo, rep.mu2_hi = float(mu2_lo), float(mu2_hi)
    D_lo = np.diag(np.concatenate([
        np.full(n1, mu1_lo * rep.eps1_lo ** 2),
        np.full(n2, mu2_lo * rep.p2_lo)]))
    D_hi = np.diag(np.concatenate([
        np.full(n1, mu1_hi * rep.eps1_hi ** 2),
        np.full(n2, mu2_hi * rep.p2_hi)]))
    P_lo = symmetrize(Pinv @ D_lo @ Pinv.T)
    P_hi = symmetrize(Pinv @ D_hi @ Pinv.T)
    return P_lo, P_hi


def certify(dec, const: AssumptionConstants, eps1_lo: float, eps1_hi: float,
            dt: float, P20_norm: float, horizon_k: int,
            Gk_seq: list | None = None, r: int | None = None,
            margin_scale: float = 0.05) -> CertificateReport:
    """Full certificate dispatch: envelopes, recursion bounds, then the
    stable-case bound if applicable, else the Grammian-window bound, else a
    report with case "none" and the failing precondition."""
    n1, n2, n_w = dec.n1, dec.n2, dec.system.n_w
    rep = CertificateReport(
        alpha_lo=const.alpha_lo, alpha_hi=const.alpha_hi,
        beta_lo=const.beta_lo, beta_hi=const.beta_hi,
        w_lo=const.w_lo, w_hi=const.w_hi,
        eps1_lo=eps1_lo, eps1_hi=eps1_hi)
    if n2 == 0:
        rep.case = "lemma6"
        rep.reason = "weakly unobservable block is empty; bound from eps1 alone"
        rep.P_lo, rep.P_hi = theorem2_bounds(rep, dec.P1, n1, n2)
        return rep
    (rep.gamma1_lo, rep.gamma1_hi,
     rep.gamma2_lo, rep.gamma2_hi) = gamma_bounds(const, eps1_lo, eps1_hi,
                                                  n1, n_w)
    (rep.lambda2_hi, rep.a2_hi,
     rep.lambda2_lo, rep.a2_lo) = exponential_envelopes(dec.A4, margin_scale)
    rep = lemma5_bounds(rep, dec, dt, P20_norm, horizon_k)
    if r is None:
        r = max(n2, 1)
    if rep.f_bar < 1.0 - rep.beta_hi:
        rep.p2_hi = lemma6_uniform_bound(rep, dt)
        rep.case = "lemma6"
    else:
        try:
            rho = grammian_rho(dec, Gk_seq or [], r, dt)
            rep.p2_hi = lemma7_uniform_bound(rep, rho, r, dt)
            rep.case = "lemma7"
        except (CertificateUnavailableError, InvalidParameterError) as exc:
            rep.case = "none"
            rep.reason = str(exc)
            return rep
    try:
        rep.P_lo, rep.P_hi = theorem2_bounds(rep, dec.P1, n1, n2)
    except CertificateUnavailableError as exc:
        rep.case = "none"
        rep.reason = str(exc)
    return rep
