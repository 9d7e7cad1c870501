"""Truncated Laplace--Beltrami eigenbases, heat kernels, and heat solves.

The basis is exact for the analytic kinds: Fourier modes on the torus
(sampled modes below Nyquist are exactly mass-orthonormal on the uniform
grid) and spherical harmonics on the round sphere (sampled at the icosphere
vertices and block-orthonormalized against the lumped mass, keeping the
exact eigenvalues l(l+1)/r^2).  Mesh kinds use ARPACK shift-invert on the
cotangent pair.

Heat kernels: lattice image sums on the torus, a Legendre series in the
geodesic angle on the sphere (with an arbitrary-precision fallback where the
alternating series cancels below float64 resolution), and the truncated
spectral series on meshes.  Every kernel field is normalized to unit
discrete mass; the raw quadrature mass is kept as a diagnostic.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import special as sp_special
from scipy.sparse.linalg import ArpackNoConvergence, eigsh

from . import geometry as geo
from .errors import EigensolverError, ParameterError, TruncationError

log = logging.getLogger(__name__)

DEFAULT_MESH_MODES = 200

#: kernel method tags
SPECTRAL_SERIES = "spectral-series"
TORUS_IMAGE_SUM = "torus-image-sum"
SPHERE_HARMONIC_SERIES = "sphere-harmonic-series"


@dataclass
class SpectralBasis:
    """Mass-orthonormal eigenpairs, eigenvalues ascending, lambda_0 = 0.

    ``fields`` has one eigenfield per row.  ``residuals`` are backward
    errors ||S phi - lambda M phi|| / (1 + lambda) against the operator pair
    (identically zero for the analytically constructed bases, which define
    the discrete operator spectrally).
    """

    geometry: geo.Geometry
    eigenvalues: np.ndarray
    fields: np.ndarray
    residuals: np.ndarray
    method: str

    @property
    def n_modes(self) -> int:
        return len(self.eigenvalues)

    def project(self, values: np.ndarray) -> np.ndarray:
        return self.fields @ (self.geometry.masses * np.asarray(values))

    def synthesize(self, coeffs: np.ndarray) -> np.ndarray:
        return np.asarray(coeffs) @ self.fields


def eigenbasis(ops: geo.OperatorPair, N: int = DEFAULT_MESH_MODES) -> SpectralBasis:
    """N smallest eigenpairs of the stiffness/mass pair.

    Deterministic sign convention: the first component exceeding
    1e-8 * max|phi| is positive.
    """
    g = ops.geometry
    if N < 2:
        raise ParameterError("need at least 2 modes")
    if N > g.n_samples:
        raise ParameterError(f"N={N} exceeds sample count {g.n_samples}")
    if g.kind == geo.FLAT_TORUS:
        basis = _torus_basis(g, N)
    elif g.kind == geo.ROUND_SPHERE:
        basis = _sphere_basis(g, N)
    else:
        basis = _mesh_basis(ops, N)
    _fix_signs(basis.fields)
    return basis


def _fix_signs(fields):
    for row in fields:
        marker = np.nonzero(np.abs(row) > 1e-8 * np.abs(row).max())[0]
        if marker.size and row[marker[0]] < 0:
            row *= -1.0


def _torus_basis(g, N):
    nx, ny = g.grid_shape
    Lx, Ly = g.periods
    kmax = 1
    while (2 * kmax * (kmax + 1) + 1) * 2 < 2 * N + 2:
        kmax += 1
    kmax += 1
    if kmax >= min(nx, ny) // 2:
        raise ParameterError(f"N={N} requires modes beyond the grid Nyquist limit")
    modes = []  # (lam, kx, ky)
    for kx in range(0, kmax + 1):
        for ky in range(-kmax, kmax + 1):
            if kx == 0 and ky <= 0:
                continue
            lam = (2 * np.pi * kx / Lx) ** 2 + (2 * np.pi * ky / Ly) ** 2
            modes.append((lam, kx, ky))
    modes.sort(key=lambda m: (m[0], m[1], m[2]))

    area = g.area
    n = g.n_samples
    fields = np.empty((N, n))
    eigenvalues = np.empty(N)
    fields[0] = 1.0 / np.sqrt(area)
    eigenvalues[0] = 0.0
    x, y = g.positions[:, 0], g.positions[:, 1]
    i = 1
    for lam, kx, ky in modes:
        if i >= N:
            break
        phase = 2 * np.pi * (kx * x / Lx + ky * y / Ly)
        fields[i] = np.sqrt(2.0 / area) * np.cos(phase)
        eigenvalues[i] = lam
        i += 1
        if i >= N:
            break
        fields[i] = np.sqrt(2.0 / area) * np.sin(phase)
        eigenvalues[i] = lam
        i += 1
    return SpectralBasis(geometry=g, eigenvalues=eigenvalues, fields=fields,
                         residuals=np.zeros(N), method="torus-fourier")


def real_sph_harm(l: int, m: int, polar: np.ndarray, azim: np.ndarray) -> np.ndarray:
    """Real orthonormal spherical harmonic on the unit sphere."""
    if m == 0:
        return sp_special.sph_harm_y(l, 0, polar, azim).real
    y = sp_special.sph_harm_y(l, abs(m), polar, azim)
    if m > 0:
        return np.sqrt(2.0) * (-1.0) ** m * y.real
    return np.sqrt(2.0) * (-1.0) ** m * y.imag


def _sphere_basis(g, N):
    r = g.radius
    u = g.positions / r
    polar = np.arccos(np.clip(u[:, 2], -1.0, 1.0))
    azim = np.arctan2(u[:, 1], u[:, 0])
    L = 0
    while (L + 1) ** 2 < N:
        L += 1

    masses = g.masses
    area = g.area
    fields = [np.full(g.n_samples, 1.0 / np.sqrt(area))]
    eigenvalues = [0.0]
    prev = np.array(fields)  # rows orthonormal so far
    for l in range(1, L + 1):
        block = np.array([real_sph_harm(l, m, polar, azim) / r
                          for m in range(-l, l + 1)])
        # sequential Gram-Schmidt against lower blocks, then a symmetric
        # (Loewdin) orthonormalization inside the degenerate block
        block -= (block @ (prev * masses).T) @ prev
        gram = (block * masses) @ block.T
        w, V = np.linalg.eigh(gram)
        if w.min() <= 1e-10 * w.max():
            raise EigensolverError(f"sampled harmonic block l={l} is numerically "
                                   "rank-deficient on this mesh")
        inv_sqrt = V @ np.diag(1.0 / np.sqrt(w)) @ V.T
        block = inv_sqrt @ block
        fields.extend(block)
        eigenvalues.extend([l * (l + 1) / r**2] * (2 * l + 1))
        prev = np.array(fields)
    fields = np.array(fields)[:N]
    eigenvalues = np.array(eigenvalues)[:N]
    return SpectralBasis(geometry=g, eigenvalues=eigenvalues, fields=fields,
                         residuals=np.zeros(N), method="sphere-harmonics")


def _mesh_basis(ops, N):
    g = ops.geometry
    S, M = ops.stiffness, ops.mass
    try:
        vals, vecs = eigsh(S, k=N, M=M, sigma=-1.0, which="LM")
    except ArpackNoConvergence as exc:
        raise EigensolverError(f"ARPACK did not converge: {exc}") from exc
    order = np.argsort(vals)
    vals, vecs = vals[order], vecs[:, order]
    if abs(vals[0]) > 1e-8 * max(vals[-1], 1.0):
        raise EigensolverError(f"smallest eigenvalue {vals[0]:.3e} is not "
                               "numerically zero; mesh operators suspect")
    vals[0] = 0.0
    fields = vecs.T.copy()
    const = np.full(g.n_samples, 1.0 / np.sqrt(g.area))
    fields[0] = const
    masses = g.masses
    for i in range(1, N):
        c = fields[i] @ (masses * const)
        fields[i] -= c * const
        fields[i] /= np.sqrt(fields[i] @ (masses * fields[i]))
    res = np.empty(N)
    for i in range(N):
        r = S @ fields[i] - vals[i] * (M @ fields[i])
        res[i] = np.linalg.norm(r) / (1.0 + vals[i])
    return SpectralBasis(geometry=g, eigenvalues=vals, fields=fields,
                         residuals=res, method="mesh-arpack")


# ---------------------------------------------------------------------------
# heat kernels


@dataclass
class HeatKernelField:
    """Heat kernel H(., o; t) sampled on the geometry, unit discrete mass.

    ``raw_mass`` is the quadrature mass of the un-normalized evaluation and
    ``truncation_error`` an estimate of the series truncation left in the
    values; both propagate into trace provenance headers downstream.
    """

    geometry: geo.Geometry
    values: np.ndarray
    t: float
    source: int
    method: str
    raw_mass: float
    truncation_error: float

    def __post_init__(self):
        vmax = self.values.max()
        if vmax <= 0:
            raise TruncationError("kernel evaluation produced a non-positive field")
        vmin = self.values.min()
        if vmin < -1e-8 * vmax:
            raise TruncationError(
                f"kernel negativity {vmin:.3e} beyond tolerance {1e-8 * vmax:.3e}; "
                "increase the basis truncation or the time")
        mass = geo.integrate(self.geometry, self.values)
        if abs(mass - 1.0) > 1e-6:
            raise TruncationError(f"kernel mass {mass} deviates from 1 beyond 1e-6")


def heat_kernel(g: geo.Geometry, basis: SpectralBasis | None, o: int | None,
                t: float, method: str | None = None) -> HeatKernelField:
    """Fundamental solution H(x, o; t) as a field over the samples.

    Analytic kinds bypass the basis (image sum / Legendre series) unless
    ``method='spectral-series'`` forces the truncated series, which requires
    a basis and obeys the tail rule exp(-lambda_{N-1} t) * N <= 1e-6.
    """
    if t <= 0:
        raise ParameterError("heat kernel requires t > 0")
    o = g.basepoint if o is None else int(o)
    if method is None:
        if g.kind == geo.FLAT_TORUS:
            method = TORUS_IMAGE_SUM
        elif g.kind == geo.ROUND_SPHERE:
            method = SPHERE_HARMONIC_SERIES
        else:
            method = SPECTRAL_SERIES

    if method == TORUS_IMAGE_SUM:
        values, trunc = _torus_image_sum(g, o, t)
    elif method == SPHERE_HARMONIC_SERIES:
        coef, trunc = sphere_heat_coeffs(g, t)
        ctheta = np.clip((g.positions @ g.positions[o]) / g.radius**2, -1.0, 1.0)
        values = legendre_series(ctheta, coef)
    elif method == SPECTRAL_SERIES:
        if basis is None:
            raise ParameterError("spectral-series kernel requires a basis")
        values, trunc = _spectral_kernel(basis, o, t)
    else:
        raise ParameterError(f"unknown kernel method {method!r}")

    raw_mass = geo.integrate(g, values)
    if raw_mass <= 0:
        raise TruncationError(f"kernel quadrature mass {raw_mass} is not positive")
    values = values / raw_mass
    return HeatKernelField(geometry=g, values=values, t=float(t), source=o,
                           method=method, raw_mass=raw_mass,
                           truncation_error=trunc)


def _torus_image_sum(g, o, t):
    Lx, Ly = g.periods
    dx = g.positions[:, 0] - g.positions[o, 0]
    dy = g.positions[:, 1] - g.positions[o, 1]
    sx = _wrapped_gaussian_1d(dx, Lx, t)
    sy = _wrapped_gaussian_1d(dy, Ly, t)
    return (sx * sy) / (4.0 * np.pi * t), 0.0


def _wrapped_gaussian_1d(d, L, t, tail=1e-18):
    """sum_k exp(-(d + k L)^2 / 4t); k range chosen so the tail is < `tail`."""
    reach = np.sqrt(4.0 * t * np.log(1.0 / tail))
    kmax = int(np.ceil((reach + L) / L))
    ks = np.arange(-kmax, kmax + 1)
    return np.exp(-((d[:, None] + ks[None, :] * L) ** 2) / (4.0 * t)).sum(axis=1)


def sphere_heat_coeffs(g, t, tail=1e-17):
    """Legendre coefficients of the sphere kernel, truncated by tail bound."""
    r2 = g.radius**2
    coef = []
    l = 0
    total = 0.0
    while True:
        term = (2 * l + 1) * np.exp(-l * (l + 1) * t / r2) / (4.0 * np.pi * r2)
        coef.append(term)
        total = max(total, term)
        if l > 5 and term < tail * total:
            break
        if l > 600:
            raise TruncationError("sphere kernel series did not reach the tail "
                                  f"bound by l=600 (t={t} too small)")
        l += 1
    return np.array(coef), coef[-1]


def legendre_series(c, coef):
    """Evaluate sum coef_l P_l(c) stably, with an mpmath fallback where the
    alternating series cancels below float64 resolution."""
    vals = np.polynomial.legendre.legval(c, coef)
    floor = 1e-11 * coef.max()
    zone = (np.abs(vals) < floor) | (vals <= 0.0)
    if np.any(zone):
        vals = vals.copy()
        vals[zone] = _legendre_series_mp(np.atleast_1d(c)[zone], [coef])[0]
    return vals


def _legendre_series_mp(c, coef_list, dps=50):
    """Evaluate several Legendre series at points c via mpmath recurrences.

    Returns one float64 array per coefficient vector.  All vectors must have
    a common length; the recurrence is shared across them.
    """
    import mpmath as mp

    nmax = max(len(cf) for cf in coef_list)
    with mp.workdps(dps):
        cs = [mp.mpf(float(x)) for x in np.atleast_1d(c)]
        sums = [[mp.mpf(0) for _ in cs] for _ in coef_list]
        p_prev = [mp.mpf(1) for _ in cs]
        p_curr = [x for x in cs]
        for j, cf in enumerate(coef_list):
            if len(cf) > 0:
                for i in range(len(cs)):
                    sums[j][i] += mp.mpf(float(cf[0])) * p_prev[i]
            if len(cf) > 1:
                for i in range(len(cs)):
                    sums[j][i] += mp.mpf(float(cf[1])) * p_curr[i]
        for l in range(1, nmax - 1):
            p_next = [((2 * l + 1) * cs[i] * p_curr[i] - l * p_prev[i]) / (l + 1)
                      for i in range(len(cs))]
            for j, cf in enumerate(coef_list):
                if l + 1 < len(cf):
                    w = mp.mpf(float(cf[l + 1]))
                    for i in range(len(cs)):
                        sums[j][i] += w * p_next[i]
            p_prev, p_curr = p_curr, p_next
        return [np.array([float(s) for s in row]) for row in sums]


def _spectral_kernel(basis, o, t):
    lam = basis.eigenvalues
    N = basis.n_modes
    tail = np.exp(-lam[-1] * t) * N
    if tail > 1e-6:
        raise TruncationError(
            f"spectral kernel tail estimate {tail:.3e} > 1e-6 at t={t} with "
            f"N={N}; increase N or t")
    weights = np.exp(-lam * t) * basis.fields[:, o]
    return weights @ basis.fields, tail


def kernel_gradient_squared(H: HeatKernelField) -> np.ndarray:
    """Per-sample |grad H|^2 of a (normalized) kernel field.

    Exact image-sum derivatives on the torus, the Legendre derivative of the
    radial profile on the sphere, and vertex-averaged element gradients for
    spectral-series kernels.
    """
    g = H.geometry
    if H.method == TORUS_IMAGE_SUM:
        Lx, Ly = g.periods
        dx = g.positions[:, 0] - g.positions[H.source, 0]
        dy = g.positions[:, 1] - g.positions[H.source, 1]
        sx = _wrapped_gaussian_1d(dx, Lx, H.t)
        sy = _wrapped_gaussian_1d(dy, Ly, H.t)
        sxp = _wrapped_gaussian_1d_deriv(dx, Lx, H.t)
        syp = _wrapped_gaussian_1d_deriv(dy, Ly, H.t)
        hx = sxp * sy / (4.0 * np.pi * H.t)
        hy = sx * syp / (4.0 * np.pi * H.t)
        return (hx**2 + hy**2) / H.raw_mass**2
    if H.method == SPHERE_HARMONIC_SERIES:
        coef, _ = sphere_heat_coeffs(g, H.t)
        c = np.clip((g.positions @ g.positions[H.source]) / g.radius**2, -1.0, 1.0)
        d1 = np.polynomial.legendre.legder(coef)
        P1 = np.polynomial.legendre.legval(c, d1)
        floor = 1e-11 * max(abs(d1).max(), 1e-300)
        zone = np.abs(P1) < floor
        if np.any(zone):
            P1 = P1.copy()
            P1[zone] = _legendre_series_mp(c[zone], [d1])[0]
        s = np.sqrt(np.clip(1.0 - c**2, 0.0, None))
        return (P1 * s / g.radius) ** 2 / H.raw_mass**2
    return geo.pointwise_gradient_squared(g, H.values)


def _wrapped_gaussian_1d_deriv(d, L, t, tail=1e-18):
    """d/dd of the wrapped Gaussian sum."""
    reach = np.sqrt(4.0 * t * np.log(1.0 / tail))
    kmax = int(np.ceil((reach + L) / L))
    ks = np.arange(-kmax, kmax + 1)
    shifted = d[:, None] + ks[None, :] * L
    return (-(shifted / (2.0 * t)) * np.exp(-(shifted**2) / (4.0 * t))).sum(axis=1)


# ---------------------------------------------------------------------------
# heat solves


def solve_heat(basis: SpectralBasis, u0, t: float) -> geo.ScalarField:
    """u(t) = sum exp(-lambda_i t) <u0, phi_i>_mass phi_i.

    At t = 0 this returns the basis projection of u0; use
    :func:`projection_residual` for the discarded component.
    """
    if t < 0:
        raise ParameterError("solve_heat requires t >= 0")
    values = u0.values if isinstance(u0, geo.ScalarField) else np.asarray(u0)
    coeffs = basis.project(values) * np.exp(-basis.eigenvalues * t)
    return geo.ScalarField(basis.geometry, basis.synthesize(coeffs))


def reversed_time_solve(basis: SpectralBasis, v_final, s: float) -> geo.ScalarField:
    """Backward heat equation v_t + Delta v = 0 with terminal data v_final,
    evaluated s time units earlier.

    In reversed time w(s) = v(t_final - s) the equation becomes the ordinary
    heat equation, so the contract is identical to :func:`solve_heat`; the
    operator +Delta is never exponentiated forward.
    """
    if s < 0:
        raise ParameterError("reversed_time_solve requires s >= 0")
    return solve_heat(basis, v_final, s)


def projection_residual(basis: SpectralBasis, u0) -> float:
    """Relative mass-norm of the component of u0 outside the basis."""
    values = u0.values if isinstance(u0, geo.ScalarField) else np.asarray(u0)
    proj = basis.synthesize(basis.project(values))
    num = np.sqrt(geo.integrate(basis.geometry, (values - proj) ** 2))
    den = np.sqrt(geo.integrate(basis.geometry, values**2))
    return float(num / den) if den > 0 else 0.0
