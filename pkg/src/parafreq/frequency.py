"""Parabolic frequency functionals Z, D, I and their monotonicity checks.

With H(., o; t) the heat kernel and u the heat evolution of u0 evaluated at
tau = T - t,

    Z(t) = integral H u^2 dmu        D(t) = integral H |grad u|^2 dmu
    I(t) = t D / Z                   N(t) = e^{sqrt(t)} I(t),

the module traces these over a time grid, checks Z' = 2D and the curvature-
weighted monotonicity of D, evaluates the weighted-distance inequality
(factor 3/2), the vanishing-order power-law bound with exponent 2 C(t0),
C(t0) = e^{sqrt(t0)} t0 D(t0)/Z(t0), and fits the diagnostic lower-bound
family c * exp(-C t^{-gamma}) for D.

Initial data is normalized so the Dirichlet energy of u0 is one; the raw
scale is recorded.  I and N are invariant under rescaling u0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from . import harnack as ha
from . import spectral as sp
from .errors import DomainError, ParameterError

QUANTITIES = ("I", "N", "D", "scaled-D", "Z")


@dataclass
class FrequencyConfig:
    """Frozen setup of one frequency experiment.

    ``coeffs`` are the basis coefficients of u0 after the unit-Dirichlet
    normalization (raw scale in ``raw_scale``); ``a0`` is the computed
    sup-norm constant max(|u0| + |grad u0| + |hess u0|_op) of the normalized
    data.
    """

    geometry: geo.Geometry
    basis: sp.SpectralBasis
    u0: geo.ScalarField
    basepoint: int
    horizon: float
    t_grid: np.ndarray
    coeffs: np.ndarray
    raw_scale: float
    a0: float
    projection_residual: float


def build_frequency_config(geometry: geo.Geometry, basis: sp.SpectralBasis,
                           u0, basepoint: int | None = None,
                           horizon: float = 1.0,
                           t_grid: np.ndarray | None = None) -> FrequencyConfig:
    """Validate and normalize a frequency experiment configuration."""
    if horizon <= 0:
        raise ParameterError("horizon T must be positive")
    values = u0.values if isinstance(u0, geo.ScalarField) else np.asarray(u0, dtype=float)
    o = geometry.basepoint if basepoint is None else int(basepoint)
    if t_grid is None:
        t_grid = np.geomspace(horizon / 200.0, horizon, 200)
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.min() <= 0 or t_grid.max() > horizon * (1 + 1e-12):
        raise ParameterError("t-grid must lie in (0, T]")
    if np.any(np.diff(t_grid) <= 0):
        raise ParameterError("t-grid must be strictly increasing")

    coeffs = basis.project(values)
    l2 = float(coeffs @ coeffs)
    energy = float(basis.eigenvalues @ coeffs**2)
    if energy <= 1e-12 * l2 or l2 == 0.0:
        raise DomainError("u0 is (numerically) constant; frequency undefined")
    raw_scale = np.sqrt(energy)
    coeffs = coeffs / raw_scale
    resid = sp.projection_residual(basis, values)

    normalized = geo.ScalarField(geometry, basis.synthesize(coeffs))
    grad = np.sqrt(np.clip(geo.pointwise_gradient_squared(geometry, normalized.values),
                           0.0, None))
    hess = ha.hessian(normalized)
    a = hess.tensors[:, 0, 0]
    b = hess.tensors[:, 0, 1]
    c = hess.tensors[:, 1, 1]
    opnorm = 0.5 * np.abs(a + c) + np.sqrt((0.5 * (a - c)) ** 2 + b**2)
    a0 = float(np.max(np.abs(normalized.values) + grad + opnorm))
    return FrequencyConfig(geometry=geometry, basis=basis, u0=normalized,
                           basepoint=o, horizon=float(horizon), t_grid=t_grid,
                           coeffs=coeffs, raw_scale=float(raw_scale), a0=a0,
                           projection_residual=resid)


@dataclass
class Trace:
    """Time-indexed rows of the frequency functionals with provenance."""

    t: np.ndarray
    Z: np.ndarray
    D: np.ndarray
    I: np.ndarray
    N: np.ndarray
    W: np.ndarray | None = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if np.any(self.Z <= 0):
            raise DomainError("trace contains non-positive Z rows")
        for col in (self.t, self.Z, self.D, self.I, self.N):
            if not np.all(np.isfinite(col)):
                raise DomainError("trace contains non-finite entries")

    def column(self, name: str, geometry: geo.Geometry | None = None) -> np.ndarray:
        if name == "scaled-D":
            K = 0.0 if geometry is None else max(0.0, -geometry.K_lower)
            m = 2 if geometry is None else geometry.dimension
            return np.exp(2.0 * (m - 1) * K * self.t) * self.D
        if name == "W" and self.W is not None:
            return self.W
        if name in ("t", "Z", "D", "I", "N"):
            return getattr(self, name)
        raise ParameterError(f"unknown trace column {name!r}")

    def header(self) -> list[str]:
        return ["t", "Z", "D", "I", "N"] + (["W"] if self.W is not None else [])

    def to_csv(self, path) -> None:
        cols = [self.column(h) for h in self.header()]
        with open(path, "w", newline="") as fh:
            fh.write(",".join(self.header()) + "\n")
            for row in zip(*cols):
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


@dataclass
class MonotonicityVerdict:
    """Nondecrease check of one trace column at a relative tolerance."""

    quantity: str
    passed: bool
    prefix_end: float
    worst_violation: float
    tolerance: float

    def to_json(self) -> str:
        return json.dumps({
            "quantity": self.quantity, "pass": self.passed,
            "monotone_prefix_end": self.prefix_end,
            "worst_violation": self.worst_violation, "tol": self.tolerance,
        }, sort_keys=True)


# ---------------------------------------------------------------------------
# core evaluations


def _kernel(cfg: FrequencyConfig, t: float, cache: dict | None):
    if cache is not None and t in cache:
        return cache[t]
    H = sp.heat_kernel(cfg.geometry, cfg.basis, cfg.basepoint, t)
    if cache is not None:
        cache[t] = H
    return H


def compute_zd(cfg: FrequencyConfig, t: float,
               kernel_cache: dict | None = None) -> tuple[float, float]:
    """Z(t) and D(t): heat-kernel weighted mass and Dirichlet integrals of
    u(., T - t)."""
    if not 0 < t <= cfg.horizon * (1 + 1e-12):
        raise ParameterError(f"t={t} outside (0, T={cfg.horizon}]")
    tau = max(cfg.horizon - t, 0.0)
    u = cfg.basis.synthesize(cfg.coeffs * np.exp(-cfg.basis.eigenvalues * tau))
    H = _kernel(cfg, t, kernel_cache)
    Z = geo.integrate(cfg.geometry, H.values * u**2)
    if Z <= 0:
        raise DomainError(f"Z({t}) = {Z} is not positive")
    D = geo.weighted_dirichlet(cfg.geometry, u, H.values)
    return float(Z), float(D)


def frequency_trace(cfg: FrequencyConfig, with_w: bool = False,
                    kernel_cache: dict | None = None) -> Trace:
    """One row per grid time with I = tD/Z and N = e^{sqrt(t)} I."""
    ts = cfg.t_grid
    Z = np.empty(len(ts))
    D = np.empty(len(ts))
    W = np.empty(len(ts)) if with_w else None
    trunc = 0.0
    for i, t in enumerate(ts):
        tau = max(cfg.horizon - t, 0.0)
        u = cfg.basis.synthesize(cfg.coeffs * np.exp(-cfg.basis.eigenvalues * tau))
        H = _kernel(cfg, t, kernel_cache)
        trunc = max(trunc, H.truncation_error)
        Z[i] = geo.integrate(cfg.geometry, H.values * u**2)
        D[i] = geo.weighted_dirichlet(cfg.geometry, u, H.values)
        if with_w:
            hess = ha.hessian(geo.ScalarField(cfg.geometry, u))
            frob2 = np.einsum("nij,nij->n", hess.tensors, hess.tensors)
            W[i] = geo.integrate(cfg.geometry, H.values * frob2)
    if np.any(Z <= 0):
        raise DomainError("non-positive Z encountered on the grid")
    I = ts * D / Z
    N = np.exp(np.sqrt(ts)) * I
    prov = {
        "horizon": cfg.horizon, "basepoint": cfg.basepoint,
        "modes": cfg.basis.n_modes, "raw_scale": cfg.raw_scale, "a0": cfg.a0,
        "projection_residual": cfg.projection_residual,
        "kernel_truncation_error": trunc,
    }
    return Trace(t=ts.copy(), Z=Z, D=D, I=I, N=N, W=W, provenance=prov)


# ---------------------------------------------------------------------------
# checks


def sequence_verdict(ts: np.ndarray, values: np.ndarray, quantity: str,
                     tol: float = 1e-6) -> MonotonicityVerdict:
    """Nondecrease verdict on a sampled quantity (ties allowed)."""
    v = np.asarray(values)
    if len(v) < 1:
        raise ParameterError("empty sequence")
    diffs = np.diff(v)
    allowed = -tol * np.abs(v[:-1])
    bad = np.nonzero(diffs < allowed)[0]
    if bad.size == 0:
        prefix_end = float(ts[-1])
        worst = 0.0
        passed = True
    else:
        prefix_end = float(ts[bad[0]])
        scale = np.abs(v[:-1][bad])
        scale[scale == 0] = 1.0
        worst = float(np.max(-(diffs[bad]) / scale))
        passed = False
    return MonotonicityVerdict(quantity=quantity, passed=passed,
                               prefix_end=prefix_end, worst_violation=worst,
                               tolerance=float(tol))


def monotonicity_verdict(trace: Trace, quantity: str, tol: float = 1e-6,
                         geometry: geo.Geometry | None = None) -> MonotonicityVerdict:
    """Pass iff consecutive differences are >= -tol * |value|; ties allowed."""
    if quantity not in QUANTITIES:
        raise ParameterError(f"unknown quantity {quantity!r}")
    return sequence_verdict(trace.t, trace.column(quantity, geometry), quantity, tol)


def check_zd_identities(trace: Trace, cfg: FrequencyConfig,
                        tol_monotone: float = 1e-6) -> dict:
    """Central-difference dZ/dt against 2D, plus the curvature-weighted
    monotonicity of D (D itself for K = 0, e^{2(m-1)Kt} D otherwise)."""
    report = {"skipped": False, "notice": ""}
    ts = trace.t
    if len(ts) < 3:
        report.update(skipped=True, notice="need >= 3 rows")
        return report
    h = np.diff(ts)
    if np.max(np.abs(h - h[0])) > 1e-9 * h[0]:
        report.update(skipped=True,
                      notice="non-uniform grid; derivative identity skipped")
    else:
        dzdt = (trace.Z[2:] - trace.Z[:-2]) / (2.0 * h[0])
        target = 2.0 * trace.D[1:-1]
        scale = np.maximum(np.abs(target), 1e-300)
        report["dzdt_max_rel_err"] = float(np.max(np.abs(dzdt - target) / scale))
    K = max(0.0, -cfg.geometry.K_lower)
    quantity = "D" if K == 0.0 else "scaled-D"
    report["D_quantity"] = quantity
    report["D_monotone"] = monotonicity_verdict(trace, quantity, tol=tol_monotone,
                                                geometry=cfg.geometry)
    return report


def lee_inequality_check(cfg: FrequencyConfig, t: float | None = None,
                         kernel_cache: dict | None = None) -> dict:
    """Weighted-distance inequality t^{-1/2} * int H |grad u|^2 d^2 <= (3/2) D.

    Evaluates the requested time (if any) and scans the config grid for the
    empirically largest passing time.
    """
    if cfg.geometry.K_lower < 0:
        raise DomainError("inequality requires nonnegative curvature "
                          f"(K_lower = {cfg.geometry.K_lower})")
    d2 = geo.geodesic_distance(cfg.geometry, cfg.basepoint).values ** 2

    def _sides(tt):
        tau = max(cfg.horizon - tt, 0.0)
        u = cfg.basis.synthesize(cfg.coeffs * np.exp(-cfg.basis.eigenvalues * tau))
        H = _kernel(cfg, tt, kernel_cache)
        lhs = geo.weighted_dirichlet(cfg.geometry, u, H.values, extra=d2) / np.sqrt(tt)
        rhs = 1.5 * geo.weighted_dirichlet(cfg.geometry, u, H.values)
        return lhs, rhs

    report = {"factor": 1.5}
    if t is not None:
        if not 0 < t <= cfg.horizon * (1 + 1e-12):
            raise ParameterError(f"t={t} outside (0, T]")
        lhs, rhs = _sides(t)
        report.update(t=float(t), lhs=lhs, rhs=rhs,
                      ratio=lhs / rhs if rhs > 0 else 0.0,
                      passed=bool(lhs <= rhs))
    largest = None
    ratios = []
    for tt in cfg.t_grid:
        lhs, rhs = _sides(tt)
        ok = lhs <= rhs
        ratios.append(lhs / rhs if rhs > 0 else 0.0)
        if ok:
            largest = float(tt)
    report["grid_ratios"] = np.array(ratios)
    report["largest_passing_t"] = largest
    return report


def vanishing_order_bound(trace: Trace, t0: float, tol: float = 1e-3) -> dict:
    """Power-law lower bound Z(t) >= Z(t0) (t/t0)^{2 C(t0)} for grid t <= t0,
    with C(t0) = e^{sqrt(t0)} t0 D(t0)/Z(t0) read off the trace."""
    idx = np.nonzero(np.isclose(trace.t, t0, rtol=1e-12, atol=0.0))[0]
    if idx.size == 0:
        raise ParameterError(f"t0={t0} is not a grid point")
    i0 = int(idx[0])
    C = trace.N[i0]
    mask = trace.t <= trace.t[i0] * (1 + 1e-15)
    bound = trace.Z[i0] * (trace.t[mask] / trace.t[i0]) ** (2.0 * C)
    ratios = trace.Z[mask] / bound
    worst = float(ratios.min())
    return {"t0": float(trace.t[i0]), "C_t0": float(C), "worst_ratio": worst,
            "rows_checked": int(mask.sum()), "tol": tol,
            "passed": bool(worst >= 1.0 - tol)}


@dataclass
class DLowerBoundFit:
    """Diagnostic fit of D(t) >= c exp(-C t^{-gamma}); constants existential,
    gamma = C_M * eps with C_M a free fit parameter."""

    c: float
    C: float
    gamma: float
    eps: float
    C_M: float
    residual: float
    n_rows: int
    note: str = ""

    def to_json(self) -> str:
        return json.dumps({
            "c": self.c, "C": self.C, "gamma": self.gamma, "eps": self.eps,
            "C_M": self.C_M, "residual": self.residual, "n_rows": self.n_rows,
            "note": self.note,
        }, sort_keys=True)


def d_lower_bound_diagnostic(trace: Trace, eps: float = 0.25) -> DLowerBoundFit:
    """Least-squares fit of the lower-bound family over an exponent grid,
    then shift down so the bound holds on every fitted row."""
    mask = trace.D > 0
    if not np.any(mask):
        return DLowerBoundFit(c=0.0, C=0.0, gamma=0.0, eps=eps, C_M=0.0,
                              residual=0.0, n_rows=0,
                              note="constant solution: D identically zero")
    ts = trace.t[mask]
    logD = np.log(trace.D[mask])
    # below gamma_ident the exponent profile t^{-gamma} is numerically
    # constant over the grid and the two parameters are not identifiable
    span = ts.max() / ts.min()
    gamma_ident = max(1e-3, np.log(1.1) / np.log(span)) if span > 1 else 1e-3
    best = None
    for gamma in np.geomspace(gamma_ident, 2.0, 64):
        x = ts ** (-gamma)
        A = np.column_stack([np.ones_like(x), -x])
        sol, *_ = np.linalg.lstsq(A, logD, rcond=None)
        alpha, C = sol
        C = max(C, 0.0)
        resid = float(np.mean((logD - (alpha - C * x)) ** 2))
        if best is None or resid < best[0]:
            best = (resid, gamma, alpha, C)
    resid, gamma, alpha, C = best
    x = ts ** (-gamma)
    alpha = float(np.clip(np.min(logD + C * x), -700.0, 700.0))  # true lower bound
    return DLowerBoundFit(c=float(np.exp(alpha)), C=float(C), gamma=float(gamma),
                          eps=eps, C_M=float(gamma / eps), residual=resid,
                          n_rows=int(mask.sum()))
