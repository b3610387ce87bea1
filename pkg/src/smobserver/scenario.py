"""Scenario configuration: everything needed to reproduce a run byte-exactly,
including the built-in benchmark systems, YAML round-tripping, and the
analytic output-derivative bound used by the error envelope.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import yaml

from .decomposition import LtiSystem
from .errors import InvalidParameterError, ScenarioFormatError
from .generators import ShapeGenerator, SignalGenerator
from .numerics import spectral_norm

FORMAT_TAG = "smobserver-scenario/1"


@dataclass(frozen=True)
class HgoSettings:
    """Derivative-bank design knobs; unset bounds are derived analytically."""

    eps: float = 0.01
    pole: float = 1.0
    l_override: int | None = None
    zbar0: float | None = None
    y_deriv_bound: float | None = None


@dataclass(frozen=True)
class CertOptions:
    """Certificate configuration: window length, envelope margin, and how the
    per-step parameter bounds are obtained ("declared" or "harvested")."""

    mode: str = "harvested"
    r: int | None = None
    margin_scale: float = 0.05
    harvest_margin: float = 0.05
    alpha_lo: float | None = None
    alpha_hi: float | None = None
    beta_lo: float | None = None
    beta_hi: float | None = None

    def __post_init__(self):
        if self.mode not in ("declared", "harvested"):
            raise ScenarioFormatError("cert mode must be declared|harvested")
        if self.mode == "declared":
            vals = (self.alpha_lo, self.alpha_hi, self.beta_lo, self.beta_hi)
            if any(v is None for v in vals):
                raise ScenarioFormatError(
                    "declared cert mode needs all four alpha/beta bounds")


@dataclass(frozen=True)
class ScenarioConfig:
    """Complete, serializable description of one simulation scenario."""

    name: str
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    xhat0: np.ndarray
    K0: np.ndarray
    cw: SignalGenerator
    Kw: ShapeGenerator
    w_true: SignalGenerator
    dt: float = 0.1
    horizon: float = 30.0
    uio_poles: tuple[float, ...] = ()
    hgo: HgoSettings = field(default_factory=HgoSettings)
    cert: CertOptions = field(default_factory=CertOptions)
    plant_substeps: int = 10
    hgo_substeps: int = 100
    quad_substeps: int = 20
    seed: int = 0
    mc_freq_max: float = 2.0
    mc_n_terms: int = 3
    eps1_floor: float = 1e-6
    x0_true: np.ndarray | None = None

    def __post_init__(self):
        for name in ("A", "B", "C", "D", "xhat0", "K0"):
            object.__setattr__(self, name,
                               np.asarray(getattr(self, name), dtype=float))
        sys = self.system  # validates dimensions
        n = sys.n_x
        if self.xhat0.shape != (n,):
            raise ScenarioFormatError("xhat0 dimension mismatch")
        if self.K0.shape != (n, n):
            raise ScenarioFormatError("K0 dimension mismatch")
        if self.dt <= 0.0 or self.horizon <= 0.0:
            raise ScenarioFormatError("dt and horizon must be positive")
        if self.cw.dim != sys.n_w or self.w_true.dim != sys.n_w \
                or self.Kw.dim != sys.n_w:
            raise ScenarioFormatError("input generator dimension mismatch")
        for s in (self.plant_substeps, self.hgo_substeps, self.quad_substeps):
            if s < 1:
                raise ScenarioFormatError("substep counts must be >= 1")
        if self.quad_substeps % 2:
            raise ScenarioFormatError("quad_substeps must be even (Simpson)")
        if self.x0_true is not None:
            object.__setattr__(self, "x0_true",
                               np.asarray(self.x0_true, dtype=float))
        # the simulated true input must respect its own declared bound
        ts = np.arange(0.0, self.horizon + 0.5 * self.dt, self.dt)
        dev = self.w_true(ts) - self.cw(ts)
        Kws = self.Kw(ts)
        for j in range(ts.shape[0]):
            q = dev[j] @ np.linalg.solve(Kws[j], dev[j])
            if q > 1.0 + 1e-9:
                raise ScenarioFormatError(
                    f"w_true leaves its bounding ellipsoid at t={ts[j]:.3f}")

    @property
    def system(self) -> LtiSystem:
        return LtiSystem(self.A, self.B, self.C, self.D)

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))

    def with_overrides(self, **kwargs) -> "ScenarioConfig":
        return replace(self, **kwargs)

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        d = {
            "format": FORMAT_TAG,
            "name": self.name,
            "A": self.A.tolist(), "B": self.B.tolist(),
            "C": self.C.tolist(), "D": self.D.tolist(),
            "xhat0": self.xhat0.tolist(), "K0": self.K0.tolist(),
            "cw": self.cw.to_dict(), "Kw": self.Kw.to_dict(),
            "w_true": self.w_true.to_dict(),
            "dt": self.dt, "horizon": self.horizon,
            "uio_poles": list(self.uio_poles),
            "hgo": {"eps": self.hgo.eps, "pole": self.hgo.pole,
                    "l_override": self.hgo.l_override,
                    "zbar0": self.hgo.zbar0,
                    "y_deriv_bound": self.hgo.y_deriv_bound},
            "cert": {"mode": self.cert.mode, "r": self.cert.r,
                     "margin_scale": self.cert.margin_scale,
                     "harvest_margin": self.cert.harvest_margin,
                     "alpha_lo": self.cert.alpha_lo,
                     "alpha_hi": self.cert.alpha_hi,
                     "beta_lo": self.cert.beta_lo,
                     "beta_hi": self.cert.beta_hi},
            "plant_substeps": self.plant_substeps,
            "hgo_substeps": self.hgo_substeps,
            "quad_substeps": self.quad_substeps,
            "seed": self.seed,
            "mc_freq_max": self.mc_freq_max,
            "mc_n_terms": self.mc_n_terms,
            "eps1_floor": self.eps1_floor,
            "x0_true": None if self.x0_true is None else self.x0_true.tolist(),
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        if d.get("format") != FORMAT_TAG:
            raise ScenarioFormatError(
                f"unsupported scenario format {d.get('format')!r}")
        hgo = d.get("hgo", {})
        cert = d.get("cert", {})
        return cls(
            name=d["name"],
            A=np.asarray(d["A"], dtype=float),
            B=np.asarray(d["B"], dtype=float),
            C=np.asarray(d["C"], dtype=float),
            D=np.asarray(d["D"], dtype=float),
            xhat0=np.asarray(d["xhat0"], dtype=float),
            K0=np.asarray(d["K0"], dtype=float),
            cw=SignalGenerator.from_dict(d["cw"]),
            Kw=ShapeGenerator.from_dict(d["Kw"]),
            w_true=SignalGenerator.from_dict(d["w_true"]),
            dt=float(d["dt"]), horizon=float(d["horizon"]),
            uio_poles=tuple(float(p) for p in d.get("uio_poles", [])),
            hgo=HgoSettings(
                eps=float(hgo.get("eps", 0.01)),
                pole=float(hgo.get("pole", 1.0)),
                l_override=hgo.get("l_override"),
                zbar0=hgo.get("zbar0"),
                y_deriv_bound=hgo.get("y_deriv_bound")),
            cert=CertOptions(
                mode=cert.get("mode", "harvested"),
                r=cert.get("r"),
                margin_scale=float(cert.get("margin_scale", 0.05)),
                harvest_margin=float(cert.get("harvest_margin", 0.05)),
                alpha_lo=cert.get("alpha_lo"), alpha_hi=cert.get("alpha_hi"),
                beta_lo=cert.get("beta_lo"), beta_hi=cert.get("beta_hi")),
            plant_substeps=int(d.get("plant_substeps", 10)),
            hgo_substeps=int(d.get("hgo_substeps", 100)),
            quad_substeps=int(d.get("quad_substeps", 20)),
            seed=int(d.get("seed", 0)),
            mc_freq_max=float(d.get("mc_freq_max", 2.0)),
            mc_n_terms=int(d.get("mc_n_terms", 3)),
            eps1_floor=float(d.get("eps1_floor", 1e-6)),
            x0_true=(None if d.get("x0_true") is None
                     else np.asarray(d["x0_true"], dtype=float)))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            yaml.safe_dump(self.to_dict(), fh, sort_keys=False)

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        with open(path, "r", encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
        if not isinstance(data, dict):
            raise ScenarioFormatError("scenario file is not a mapping")
        return cls.from_dict(data)


# -- analytic signal bounds ------------------------------------------------

def input_bounds(cfg: ScenarioConfig) -> tuple[float, float]:
    """(w_lo, w_hi): eigenvalue range of K_w(t) over all times."""
    return cfg.Kw.eig_bounds()


def input_norm_bound(cfg: ScenarioConfig) -> float:
    """sup over time of ||w|| for any admissible input."""
    center = float(np.linalg.norm(cfg.cw.deriv_bound(0)))
    _, w_hi = cfg.Kw.eig_bounds()
    return center + np.sqrt(w_hi)


def input_deriv_bound(cfg: ScenarioConfig, order: int) -> float:
    """sup over time of ||w^(order)|| for any admissible smooth input.

    Covers both the scenario's declared w_true and the Monte-Carlo family
    c_w + L sum a_j u_j sin(omega_j t + phi_j) with sum |a_j| <= 1 and
    omega_j <= mc_freq_max.
    """
    center = float(np.linalg.norm(cfg.cw.deriv_bound(order)))
    _, w_hi = cfg.Kw.eig_bounds()
    family = np.sqrt(w_hi) * cfg.mc_freq_max ** order
    declared = float(np.linalg.norm(cfg.w_true.deriv_bound(order)))
    return center + max(family, declared - center)


def state_norm_bound(cfg: ScenarioConfig, grid_step: float = 0.01) -> float:
    """sup over [0, horizon] of ||x(t)|| for any admissible run.

    ||x(t)|| <= ||e^{At}|| (||xhat0|| + sqrt(lam_max K0))
               + int_0^t ||e^{As}|| ds * ||B|| * sup||w||.
    """
    A = cfg.A
    h = grid_step
    n_steps = int(np.ceil(cfg.horizon / h)) + 1
    import scipy.linalg as sla
    Eh = sla.expm(A * h)
    norms = np.empty(n_steps + 1)
    P = np.eye(A.shape[0])
    for j in range(n_steps + 1):
        norms[j] = np.linalg.norm(P, 2)
        P = Eh @ P
    x0_norm = float(np.linalg.norm(cfg.xhat0)) \
        + float(np.sqrt(max(np.linalg.eigvalsh(cfg.K0)[-1], 0.0)))
    w_max = input_norm_bound(cfg)
    b_norm = spectral_norm(cfg.B)
    # running integral of the norm envelope (trapezoid is fine: it is an
    # upper-bound ingredient, and the envelope is smooth)
    integral = np.concatenate([[0.0], np.cumsum(
        0.5 * (norms[1:] + norms[:-1]) * h)])
    env = norms * x0_norm + integral * b_norm * w_max
    return float(np.max(env))


def y_derivative_bound(cfg: ScenarioConfig, l: int) -> float:
    """Bound on sup_t ||y^(m)(t)|| over both m = l and m = l + 1.

    y^(m) = C A^m x + sum_{j=0}^{m-1} C A^{m-1-j} B w^(j) + D w^(m);
    each factor is replaced by its scenario-level supremum.
    """
    x_max = state_norm_bound(cfg)
    d_norm = spectral_norm(cfg.D)
    out = 0.0
    for m in (l, l + 1):
        Am = np.linalg.matrix_power(cfg.A, m)
        total = spectral_norm(cfg.C @ Am) * x_max
        for j in range(m):
            total += spectral_norm(
                cfg.C @ np.linalg.matrix_power(cfg.A, m - 1 - j) @ cfg.B) \
                * input_deriv_bound(cfg, j)
        total += d_norm * input_deriv_bound(cfg, m)
        out = max(out, total)
    return out


def default_zbar0(cfg: ScenarioConfig, y0: np.ndarray,
                  y_deriv_bound_val: float) -> float:
    """Conservative initial derivative-stack error bound."""
    return float(np.linalg.norm(y0)) + y_deriv_bound_val


# -- built-in scenarios ----------------------------------------------------

def _shared_inputs() -> tuple[SignalGenerator, ShapeGenerator, SignalGenerator]:
    from .generators import Term
    cw = SignalGenerator(components=(
        (Term(kind="sin", amp=0.5, freq=1.0),),
        (Term(kind="sin", amp=0.4, freq=1.0, phase=np.pi / 2.0),),
    ))
    Kw = ShapeGenerator(kind="const", matrix=np.diag([3.0, 5.0]))
    w_true = SignalGenerator(components=(
        (Term(kind="sin", amp=0.8, freq=1.0),),
        (Term(kind="sin", amp=0.7, freq=1.0, phase=np.pi / 2.0),),
    ))
    return cw, Kw, w_true


def example1() -> ScenarioConfig:
    """Fifth-order lateral-axis aircraft model with full unknown-input
    feedthrough; the weakly unobservable part is trivial."""
    cw, Kw, w_true = _shared_inputs()
    A = np.array([
        [0.0, 0.0, 1.0, 0.0, 0.0],
        [0.0, -0.154, -0.0042, 1.54, 0.0],
        [0.0, 0.2490, -1.0, -5.2, 0.0],
        [0.0386, -0.996, -0.003, -0.117, 0.0],
        [0.0, 0.5000, 0.0, 0.0, -0.5],
    ])
    B = np.array([
        [0.0, 0.0],
        [-0.7440, -0.0320],
        [0.3370, -1.1200],
        [0.0200, 0.0],
        [0.0, 0.0],
    ])
    C = np.array([
        [0.0, 1.0, 0.0, 0.0, -1.0],
        [0.0, 0.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 0.0, 0.0],
    ])
    D = np.ones((4, 2))
    return ScenarioConfig(
        name="example1",
        A=A, B=B, C=C, D=D,
        xhat0=np.array([0.342, 0.32, 0.0178, -0.287, -0.9497]),
        K0=0.001 * np.eye(5),
        cw=cw, Kw=Kw, w_true=w_true,
        dt=0.1, horizon=30.0,
        uio_poles=(-2.0, -2.5, -3.0, -3.5, -4.0),
        hgo=HgoSettings(eps=0.01, pole=1.0),
        cert=CertOptions(mode="harvested"))


def example2() -> ScenarioConfig:
    """Third-order unstable system whose weakly unobservable part is stable;
    the output carries no information about that part, so the measurement
    update never engages."""
    cw, Kw, w_true = _shared_inputs()
    return ScenarioConfig(
        name="example2",
        A=np.array([[2.0, 1.0, 1.0], [0.0, -17.0, 0.0], [0.0, 0.0, -20.0]]),
        B=np.array([[1.0, 1.0], [0.0, 1.0], [1.0, 1.0]]),
        C=np.array([[1.0, 0.0, 0.0]]),
        D=np.zeros((1, 2)),
        xhat0=np.array([0.03, 0.03, 0.03]),
        K0=0.01 * np.eye(3),
        cw=cw, Kw=Kw, w_true=w_true,
        dt=0.1, horizon=50.0,
        uio_poles=(-3.0,),
        hgo=HgoSettings(eps=0.01, pole=1.0),
        cert=CertOptions(mode="declared", alpha_lo=0.1, alpha_hi=0.9,
                         beta_lo=0.0, beta_hi=0.0))


BUILTIN_SCENARIOS = {"example1": example1, "example2": example2}
