"""2D Ricci flow dg/dt = -R g on a topological sphere, in conformal gauge.

The metric is g = e^{2u} g0 over a fixed sphere background, which reduces
the flow to the scalar PDE u_t = -R/2 with R = e^{-2u}(R0 - 2 Lap0 u).
Stepping is explicit RK4 with a CFL guard; the backward heat equation along
the flow is solved in the background eigenbasis with a frozen-midpoint
Crank--Nicolson step (exact diagonal exponential when the conformal factor
is spatially constant, so round trajectories track the homothety closed
form and frozen-metric solves coincide with the spectral module).

Discrete conservation facts used by the diagnostics: the total curvature
integral R dmu_g equals sum(m0 * R0) exactly at every time (the conformal
correction integrates to zero against the stiffness kernel), and the
measure-evolution identity d/dt (R dmu) = Lap R dmu holds exactly in space,
so its reported residual is pure time discretization.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import ArpackNoConvergence, eigsh

from . import geometry as geo
from . import spectral as sp
from .errors import (CflError, DomainError, EigensolverError, ExtinctionError,
                     ParameterError)
from .frequency import MonotonicityVerdict, sequence_verdict

log = logging.getLogger(__name__)

RK4_STABILITY = 2.78  # real-axis stability boundary of classical RK4


@dataclass
class FlowState:
    """One time slice of the conformal flow: g(t) = e^{2u} g0."""

    background: geo.Geometry
    ops: geo.OperatorPair
    u: np.ndarray
    t: float
    R: np.ndarray
    R0: np.ndarray
    lambda_max: float

    def scalar_curvature(self) -> geo.ScalarField:
        return geo.ScalarField(self.background, self.R)

    def recompute_R(self) -> np.ndarray:
        return _curvature(self.background, self.ops, self.R0, self.u)

    def total_curvature(self) -> float:
        """integral of R dmu_{g(t)} (= 8 pi on a sphere, conserved exactly)."""
        return float(self.background.masses @ (np.exp(2.0 * self.u) * self.R))

    def checkpoint_json(self) -> str:
        return json.dumps({
            "t": self.t,
            "u": self.u.tolist(),
            "min_R": float(self.R.min()),
            "max_R": float(self.R.max()),
            "total_R_dmu": self.total_curvature(),
        })


@dataclass
class FlowTrajectory:
    """Ordered flow states with per-step conservation diagnostics."""

    states: list
    gauss_bonnet_drift: float = 0.0
    measure_identity_residual: float | None = None

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.states])

    def state_at(self, t: float) -> FlowState:
        ts = self.times
        i = int(np.argmin(np.abs(ts - t)))
        if abs(ts[i] - t) > 1e-9 * max(1.0, abs(t)):
            log.info("state_at(%g): nearest stored time is %g", t, ts[i])
        return self.states[i]


def _curvature(g, ops, R0, u):
    lap_u = -(ops.stiffness @ u) / g.masses
    return np.exp(-2.0 * u) * (R0 - 2.0 * lap_u)


def _background_R0(g):
    if g.kind == geo.ROUND_SPHERE:
        return np.full(g.n_samples, 2.0 / g.radius**2)
    if g.kind == geo.MESH:
        if geo.euler_characteristic(g) != 2:
            raise DomainError("positive scalar curvature forces sphere topology; "
                              "mesh has chi != 2")
        return 2.0 * geo.gaussian_curvature(g).values
    raise ParameterError("Ricci flow backgrounds must be sphere-kind geometries")


def _lambda_max(g, ops):
    if "lambda_max" in g._cache:
        return g._cache["lambda_max"]
    try:
        lam = float(eigsh(ops.stiffness, k=1, M=ops.mass, which="LM",
                          return_eigenvectors=False)[0])
    except ArpackNoConvergence:
        lam = float(2.0 * np.max(ops.stiffness.diagonal() / g.masses))
    g._cache["lambda_max"] = lam
    return lam


def init_flow(g0: geo.Geometry, u_init) -> FlowState:
    """Flow state at t = 0; rejects initial data with min R <= 0."""
    u = u_init.values if isinstance(u_init, geo.ScalarField) else np.asarray(u_init, float)
    if u.shape != (g0.n_samples,):
        raise ParameterError("conformal exponent length mismatch")
    ops = geo.operators(g0)
    R0 = _background_R0(g0)
    R = _curvature(g0, ops, R0, u)
    if R.min() <= 0:
        raise DomainError(f"initial scalar curvature not positive: min R = "
                          f"{R.min():.6g}")
    state = FlowState(background=g0, ops=ops, u=u.copy(), t=0.0, R=R, R0=R0,
                      lambda_max=_lambda_max(g0, ops))
    total = state.total_curvature()
    if abs(total - 8.0 * np.pi) > 1e-3 * 8.0 * np.pi:
        raise DomainError(f"Gauss-Bonnet violated at init: integral R dmu = "
                          f"{total:.8g} vs 8 pi")
    return state


def max_stable_dt(state: FlowState, stability_factor: float = 1.0) -> float:
    """CFL bound: the stiffest conformal mode must stay inside the RK4
    stability interval, and the curvature scale bounds the ODE step."""
    stiff = state.lambda_max * float(np.exp(-2.0 * state.u).max())
    return stability_factor * min(RK4_STABILITY / stiff, 0.5 / state.R.max())


def step_flow(state: FlowState, dt: float,
              stability_factor: float = 1.0) -> FlowState:
    """One explicit RK4 step of u_t = -R(u)/2; recaches R and validates."""
    if dt < 0:
        raise ParameterError("dt must be >= 0")
    if dt == 0.0:
        return FlowState(background=state.background, ops=state.ops,
                         u=state.u.copy(), t=state.t, R=state.R.copy(),
                         R0=state.R0, lambda_max=state.lambda_max)
    dt_max = max_stable_dt(state, stability_factor)
    if dt > dt_max:
        raise CflError(f"dt={dt:.3g} exceeds stability limit {dt_max:.3g} at "
                       f"t={state.t:.4g} (max R = {state.R.max():.4g})",
                       suggested_dt=dt_max)
    g, ops, R0 = state.background, state.ops, state.R0

    def rhs(u):
        return -0.5 * _curvature(g, ops, R0, u)

    u = state.u
    k1 = rhs(u)
    k2 = rhs(u + 0.5 * dt * k1)
    k3 = rhs(u + 0.5 * dt * k2)
    k4 = rhs(u + dt * k3)
    u_new = u + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    R_new = _curvature(g, ops, R0, u_new)
    if R_new.min() <= 0:
        raise ExtinctionError(f"min R = {R_new.min():.4g} <= 0 after step to "
                              f"t={state.t + dt:.4g}: extinction/blow-up proximity")
    return FlowState(background=g, ops=ops, u=u_new, t=state.t + dt, R=R_new,
                     R0=R0, lambda_max=state.lambda_max)


def run_flow(s0: FlowState, t_end: float, dt: float,
             stability_factor: float = 1.0) -> FlowTrajectory:
    """Integrate to t_end, storing every step.

    Validates t_end against the extinction estimate min(1/max R) up front,
    accumulates the Gauss-Bonnet drift, and reports the worst interior
    residual of the measure-evolution identity d/dt(R dmu) = Lap R dmu.
    """
    if t_end <= s0.t:
        raise ParameterError("t_end must exceed the initial time")
    if dt <= 0:
        raise ParameterError("dt must be positive")
    extinction_est = s0.t + 1.0 / s0.R.max()
    if t_end >= extinction_est:
        raise ExtinctionError(f"t_end={t_end} is past the estimated extinction "
                              f"time {extinction_est:.4g}")
    states = [s0]
    total0 = s0.total_curvature()
    drift = 0.0
    t = s0.t
    while t < t_end - 1e-12:
        step = min(dt, t_end - t)
        new = step_flow(states[-1], step, stability_factor)
        drift = max(drift, abs(new.total_curvature() - total0))
        states.append(new)
        t = new.t
    residual = _measure_identity_residual(states)
    return FlowTrajectory(states=states, gauss_bonnet_drift=drift,
                          measure_identity_residual=residual)


def _measure_identity_residual(states):
    if len(states) < 3:
        return None
    g = states[0].background
    S = states[0].ops.stiffness
    worst = 0.0
    idx = np.linspace(1, len(states) - 2, min(len(states) - 2, 25)).astype(int)
    for k in idx:
        h1 = states[k].t - states[k - 1].t
        h2 = states[k + 1].t - states[k].t
        if abs(h1 - h2) > 1e-12 * h1:
            continue
        rho_prev = g.masses * np.exp(2 * states[k - 1].u) * states[k - 1].R
        rho_next = g.masses * np.exp(2 * states[k + 1].u) * states[k + 1].R
        lhs = (rho_next - rho_prev) / (h1 + h2)
        rhs = -(S @ states[k].R)
        # scale floor keeps flat-curvature states (both sides ~ rounding)
        # from reporting a 0/0 noise ratio
        floor = 1e-9 * np.abs(rho_next).max() / (h1 + h2)
        scale = max(np.abs(rhs).max(), np.abs(lhs).max(), floor)
        worst = max(worst, float(np.abs(lhs - rhs).max() / scale))
    return worst


# ---------------------------------------------------------------------------
# backward heat along the flow


def backward_heat_along_flow(traj: FlowTrajectory, v_end,
                             basis: sp.SpectralBasis | None = None,
                             n_modes: int = 100) -> tuple[np.ndarray, sp.SpectralBasis]:
    """Solve v_t + Lap_{g(t)} v = 0 backward from terminal data at the final
    trajectory time; returns v sampled at every trajectory time (rows
    aligned with traj.states) plus the basis used.

    Each reversed-time step is a forward diffusion with the metric frozen at
    the step midpoint: v' = -(G Lambda) v in basis coordinates with
    G = Phi^T M e^{-2u} Phi, integrated by Crank--Nicolson; a spatially
    constant conformal factor makes G scalar and the step is then the exact
    exponential.
    """
    states = traj.states
    g = states[0].background
    values = v_end.values if isinstance(v_end, geo.ScalarField) else np.asarray(v_end, float)
    if basis is None:
        basis = sp.eigenbasis(states[0].ops, min(n_modes, g.n_samples - 2))
    coeffs = basis.project(values)
    energy = float(basis.eigenvalues @ coeffs**2)
    if energy <= 1e-12 * float(coeffs @ coeffs):
        raise DomainError("terminal data is constant; the theorem quantifies "
                          "over nonconstant solutions")
    lam = basis.eigenvalues
    masses = g.masses
    n_t = len(states)
    out = np.empty((n_t, g.n_samples))
    vhat = coeffs.copy()
    out[-1] = basis.synthesize(vhat)
    for k in range(n_t - 1, 0, -1):
        ds = states[k].t - states[k - 1].t
        if ds == 0.0:
            out[k - 1] = out[k]
            continue
        u_mid = 0.5 * (states[k].u + states[k - 1].u)
        spread = np.abs(u_mid - u_mid.mean()).max()
        if spread <= 1e-12 * (1.0 + abs(u_mid.mean())):
            vhat = vhat * np.exp(-lam * np.exp(-2.0 * u_mid.mean()) * ds)
        else:
            G = (basis.fields * (masses * np.exp(-2.0 * u_mid))) @ basis.fields.T
            GL = G * lam[None, :]
            A = np.eye(len(lam)) + 0.5 * ds * GL
            B = np.eye(len(lam)) - 0.5 * ds * GL
            vhat = np.linalg.solve(A, B @ vhat)
        out[k - 1] = basis.synthesize(vhat)
    return out, basis


# ---------------------------------------------------------------------------
# J(t) and the R-weighted eigenvalue


@dataclass
class JTrace:
    """Rows (t, numerator, denominator, J, lambda_R, t*lambda_R)."""

    t: np.ndarray
    num: np.ndarray
    den: np.ndarray
    J: np.ndarray
    lambda_R: np.ndarray
    t_lambda_R: np.ndarray
    provenance: dict = field(default_factory=dict)

    def header(self) -> list[str]:
        return ["t", "num", "den", "J", "lambda_R", "t_lambda_R"]

    def column(self, name):
        return getattr(self, name if name != "t_lambda_R" else "t_lambda_R")

    def to_csv(self, path) -> None:
        cols = [getattr(self, h) for h in self.header()]
        with open(path, "w", newline="") as fh:
            fh.write(",".join(self.header()) + "\n")
            for row in zip(*cols):
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")

    def verdicts(self, tol: float = 1e-6) -> dict[str, MonotonicityVerdict]:
        mask = ~np.isnan(self.lambda_R)
        return {
            "J": sequence_verdict(self.t, self.J, "J", tol),
            "t_lambda_R": sequence_verdict(self.t[mask], self.t_lambda_R[mask],
                                           "t_lambda_R", tol),
        }


def _is_spatially_constant(x, rel=1e-10):
    scale = np.abs(x).max()
    return scale == 0.0 or np.abs(x - x.mean()).max() <= rel * (1.0 + scale)


def lambda_r(state: FlowState, n_eig: int = 2,
             basis: sp.SpectralBasis | None = None) -> float:
    """First nonzero eigenvalue of the R-weighted Rayleigh quotient at g(t).

    Constant R and u reduce the quotient to the unweighted problem scaled by
    e^{-2u} (exact eigenvalue on the round sphere); otherwise the generalized
    problem with R-weighted stiffness and R e^{2u}-weighted mass is solved,
    deflating the constant mode which the weighted stiffness annihilates.
    """
    if state.R.min() <= 0:
        raise DomainError("lambda_R requires min R > 0")
    g = state.background
    if _is_spatially_constant(state.R) and _is_spatially_constant(state.u):
        scale = float(np.exp(-2.0 * state.u.mean()))
        if g.kind == geo.ROUND_SPHERE:
            return 2.0 / g.radius**2 * scale
        if basis is not None and basis.n_modes > 1:
            return float(basis.eigenvalues[1]) * scale
    tri_R = state.R[g.triangles].mean(axis=1)
    S_R = geo.cotangent_stiffness(g.vertices, g.triangles, tri_weights=tri_R)
    M_R = sparse.diags(g.masses * np.exp(2.0 * state.u) * state.R)
    try:
        vals = eigsh(S_R, k=max(2, n_eig), M=M_R, sigma=-1.0, which="LM",
                     return_eigenvectors=False)
    except ArpackNoConvergence as exc:
        raise EigensolverError(f"lambda_R eigensolve failed: {exc}") from exc
    vals = np.sort(vals)
    if abs(vals[0]) > 1e-6 * max(vals[-1], 1.0):
        raise EigensolverError(f"constant mode not resolved: lambda_0 = {vals[0]}")
    return float(vals[1])


def j_trace(traj: FlowTrajectory, v: np.ndarray,
            basis: sp.SpectralBasis | None = None,
            lambda_every: int = 1, tol: float = 1e-6) -> JTrace:
    """Frequency-type functional along the flow.

    numerator = integral |grad v|^2 R dmu_{g} (computed in the background
    metric: the 2D gradient-measure combination is conformally invariant),
    denominator = integral v^2 R dmu_g, J = t * num / den.  For spatially
    constant R the numerator uses the basis-exact Dirichlet energy.
    lambda_R is evaluated every ``lambda_every`` rows (NaN elsewhere).
    """
    states = traj.states
    g = states[0].background
    n_t = len(states)
    if v.shape[0] != n_t:
        raise ParameterError("need one v row per trajectory state")
    num = np.empty(n_t)
    den = np.empty(n_t)
    lamR = np.full(n_t, np.nan)
    for k, st in enumerate(states):
        vk = v[k]
        w = np.exp(2.0 * st.u) * st.R
        den[k] = geo.integrate(g, vk**2 * w)
        if den[k] <= 0:
            raise DomainError(f"nonpositive denominator at t={st.t}")
        if _is_spatially_constant(st.R) and basis is not None:
            vhat = basis.project(vk)
            num[k] = float(st.R.mean()) * float(basis.eigenvalues @ vhat**2)
        else:
            num[k] = geo.weighted_dirichlet(g, vk, st.R)
        if k % lambda_every == 0 or k == n_t - 1:
            lamR[k] = lambda_r(st, basis=basis)
    ts = traj.times
    J = ts * num / den
    prov = {"gauss_bonnet_drift": traj.gauss_bonnet_drift,
            "measure_identity_residual": traj.measure_identity_residual,
            "n_states": n_t}
    return JTrace(t=ts, num=num, den=den, J=J, lambda_R=lamR,
                  t_lambda_R=ts * lamR, provenance=prov)


def check_j_identity(jt: JTrace) -> float:
    """Max relative error of the central-difference denominator derivative
    against twice the numerator (the flow analog of Z' = 2D)."""
    ts, den, num = jt.t, jt.den, jt.num
    if len(ts) < 3:
        raise ParameterError("need >= 3 rows")
    worst = 0.0
    for k in range(1, len(ts) - 1):
        h1, h2 = ts[k] - ts[k - 1], ts[k + 1] - ts[k]
        if abs(h1 - h2) > 1e-9 * h1:
            continue
        dden = (den[k + 1] - den[k - 1]) / (h1 + h2)
        target = 2.0 * num[k]
        worst = max(worst, abs(dden - target) / max(abs(target), 1e-300))
    return worst
