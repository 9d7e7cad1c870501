"""Compact model surfaces: flat tori, round spheres, and triangle meshes.

A :class:`Geometry` bundles sample points, a lumped measure, curvature
descriptors, and (for meshed kinds) the triangulation.  The flat torus is
sampled on a uniform periodic grid; the round sphere is realized as an
icosphere whose vertex masses come from *spherical* triangle areas, so the
total measure equals 4*pi*r^2 exactly.  Mesh kinds are loaded from OFF/OBJ
and must be closed orientable surfaces.

Also provided: the stiffness/mass operator pair (cotangent weights with a
lumped mass for meshed kinds, an FFT-diagonalized operator for the torus),
geodesic distance to the basepoint, Gaussian curvature, and the gradient /
quadrature helpers used by every downstream module.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import dijkstra as _csgraph_dijkstra
from scipy.sparse.linalg import LinearOperator

from .errors import MeshError, ParameterError

FLAT_TORUS = "flat-torus"
ROUND_SPHERE = "round-sphere"
MESH = "mesh"


# ---------------------------------------------------------------------------
# core types


@dataclass(frozen=True)
class Geometry:
    """Immutable realization of a compact surface.

    ``positions`` holds chart coordinates (n, 2) for the torus and embedded
    points (n, 3) for sphere/mesh kinds.  ``masses`` is the lumped vertex
    measure; its sum is the surface area.  ``K_lower`` is a lower bound on
    the sectional (= Gaussian, m = 2) curvature and ``L_ricci_grad`` bounds
    |grad Ric| (zero for the analytic models).
    """

    kind: str
    positions: np.ndarray
    masses: np.ndarray
    basepoint: int = 0
    dimension: int = 2
    K_lower: float = 0.0
    L_ricci_grad: float = 0.0
    periods: tuple[float, float] | None = None
    grid_shape: tuple[int, int] | None = None
    radius: float | None = None
    subdivision: int | None = None
    vertices: np.ndarray | None = None
    triangles: np.ndarray | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        for arr in (self.positions, self.masses, self.vertices, self.triangles):
            if arr is not None:
                arr.setflags(write=False)

    @property
    def n_samples(self) -> int:
        return self.masses.shape[0]

    @property
    def area(self) -> float:
        return float(self.masses.sum())

    def with_basepoint(self, o: int) -> "Geometry":
        if not 0 <= o < self.n_samples:
            raise ParameterError(f"basepoint {o} out of range [0, {self.n_samples})")
        return Geometry(**{**self.__dict__, "basepoint": o, "_cache": self._cache})

    def to_json(self) -> str:
        """Provenance header: kind, parameters, counts."""
        rec = {
            "kind": self.kind,
            "dimension": self.dimension,
            "samples": self.n_samples,
            "area": self.area,
            "basepoint": self.basepoint,
            "K_lower": self.K_lower,
            "L_ricci_grad": self.L_ricci_grad,
        }
        if self.kind == FLAT_TORUS:
            rec["periods"] = list(self.periods)
            rec["grid_shape"] = list(self.grid_shape)
        elif self.kind == ROUND_SPHERE:
            rec["radius"] = self.radius
            rec["subdivision"] = self.subdivision
            rec["triangles"] = int(self.triangles.shape[0])
        else:
            rec["triangles"] = int(self.triangles.shape[0])
        return json.dumps(rec, sort_keys=True)


@dataclass
class ScalarField:
    """Per-sample scalar values on a geometry."""

    geometry: Geometry
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.geometry.n_samples,):
            raise ParameterError(
                f"field length {self.values.shape} != sample count {self.geometry.n_samples}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ParameterError("field contains non-finite values")


@dataclass
class OperatorPair:
    """Stiffness (Dirichlet form) and mass (L^2 quadrature) of a geometry.

    ``stiffness`` applies the symmetric PSD operator S with
    u^T S v = integral of <grad u, grad v> dmu; for the torus it is an
    FFT-backed LinearOperator whose eigenvalues are exactly the Fourier
    lattice values, for meshed kinds a sparse cotangent matrix.  ``mass`` is
    diagonal when ``lumped`` (the default).
    """

    geometry: Geometry
    stiffness: object
    mass: sparse.spmatrix
    lumped: bool = True

    def apply_stiffness(self, u: np.ndarray) -> np.ndarray:
        return self.stiffness @ u

    def dirichlet_energy(self, u: np.ndarray) -> float:
        return float(u @ (self.stiffness @ u))

    def mass_inner(self, u: np.ndarray, v: np.ndarray) -> float:
        return float(u @ (self.mass @ v))


# ---------------------------------------------------------------------------
# analytic builders


def build_analytic_geometry(kind: str, *, periods=None, radius=None, resolution=None,
                            subdivision=None, basepoint: int = 0) -> Geometry:
    """Construct a flat torus or round sphere sample geometry.

    flat-torus: ``periods=(Lx, Ly)``, ``resolution`` either an int (square
    grid) or (nx, ny); samples on the uniform periodic grid.
    round-sphere: ``radius`` and icosphere ``subdivision`` level; vertex
    masses are lumped spherical triangle areas, so they total 4*pi*r^2.
    """
    if kind == FLAT_TORUS:
        if periods is None:
            raise ParameterError("flat-torus requires periods=(Lx, Ly)")
        Lx, Ly = float(periods[0]), float(periods[1])
        if Lx <= 0 or Ly <= 0:
            raise ParameterError(f"torus periods must be positive, got {periods}")
        if resolution is None:
            resolution = 64
        if np.isscalar(resolution):
            nx = ny = int(resolution)
        else:
            nx, ny = int(resolution[0]), int(resolution[1])
        if nx < 8 or ny < 8:
            raise ParameterError("torus resolution must be >= 8 per dimension")
        xs = np.arange(nx) * (Lx / nx)
        ys = np.arange(ny) * (Ly / ny)
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        pos = np.column_stack([X.ravel(), Y.ravel()])
        w = (Lx * Ly) / (nx * ny)
        masses = np.full(nx * ny, w)
        return Geometry(kind=FLAT_TORUS, positions=pos, masses=masses,
                        basepoint=basepoint, K_lower=0.0, L_ricci_grad=0.0,
                        periods=(Lx, Ly), grid_shape=(nx, ny))

    if kind == ROUND_SPHERE:
        if radius is None or radius <= 0:
            raise ParameterError(f"sphere radius must be positive, got {radius}")
        if subdivision is None:
            subdivision = 4
        subdivision = int(subdivision)
        if subdivision < 1:
            raise ParameterError("sphere subdivision must be >= 1")
        verts, tris = icosphere(subdivision)
        verts = verts * radius
        masses = _spherical_vertex_masses(verts, tris, radius)
        return Geometry(kind=ROUND_SPHERE, positions=verts, masses=masses,
                        basepoint=basepoint, K_lower=1.0 / radius**2,
                        L_ricci_grad=0.0, radius=float(radius),
                        subdivision=subdivision, vertices=verts, triangles=tris)

    raise ParameterError(f"unknown analytic kind {kind!r}")


def icosphere(subdivision: int) -> tuple[np.ndarray, np.ndarray]:
    """Unit icosphere by repeated edge-midpoint subdivision of an icosahedron."""
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
        [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
        [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
    ], dtype=float)
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    tris = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ], dtype=np.int64)
    for _ in range(subdivision):
        verts, tris = _subdivide_once(verts, tris)
    return verts, tris


def _subdivide_once(verts, tris):
    verts = list(verts)
    midpoint = {}

    def mid(a, b):
        key = (a, b) if a < b else (b, a)
        idx = midpoint.get(key)
        if idx is None:
            p = verts[a] + verts[b]
            p = p / np.linalg.norm(p)
            verts.append(p)
            idx = len(verts) - 1
            midpoint[key] = idx
        return idx

    new_tris = []
    for a, b, c in tris:
        ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
        new_tris.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]])
    return np.array(verts), np.array(new_tris, dtype=np.int64)


def _spherical_vertex_masses(verts, tris, radius):
    """Lumped masses from spherical triangle areas (van Oosterom--Strackee)."""
    u = verts / radius
    a, b, c = u[tris[:, 0]], u[tris[:, 1]], u[tris[:, 2]]
    num = np.abs(np.einsum("ij,ij->i", a, np.cross(b, c)))
    den = 1.0 + np.einsum("ij,ij->i", a, b) + np.einsum("ij,ij->i", b, c) \
        + np.einsum("ij,ij->i", c, a)
    excess = 2.0 * np.arctan2(num, den)
    tri_area = excess * radius**2
    masses = np.zeros(len(verts))
    np.add.at(masses, tris.ravel(), np.repeat(tri_area / 3.0, 3))
    return masses


# ---------------------------------------------------------------------------
# mesh IO


def load_mesh(source, fmt: str, basepoint: int = 0) -> Geometry:
    """Read an ASCII OFF or OBJ mesh and validate it as a closed surface.

    Rejects parse failures, non-manifold edges, and open boundaries (the
    underlying results require a compact surface without boundary).  The
    curvature descriptor ``K_lower`` is the minimal angle-defect Gaussian
    curvature; ``L_ricci_grad`` is an informational bound from the largest
    per-triangle gradient of the curvature field.
    """
    if isinstance(source, (bytes, bytearray)):
        text = source.decode("utf-8")
    elif isinstance(source, io.IOBase):
        data = source.read()
        text = data.decode("utf-8") if isinstance(data, bytes) else data
    else:
        text = str(source)

    fmt = fmt.upper()
    if fmt == "OFF":
        verts, tris = _parse_off(text)
    elif fmt == "OBJ":
        verts, tris = _parse_obj(text)
    else:
        raise MeshError(f"unsupported mesh format {fmt!r}")
    return mesh_geometry(verts, tris, basepoint=basepoint)


def mesh_geometry(verts, tris, basepoint: int = 0) -> Geometry:
    """Build a mesh Geometry from arrays, enforcing the closed-surface invariants."""
    verts = np.asarray(verts, dtype=float)
    tris = np.asarray(tris, dtype=np.int64)
    if verts.ndim != 2 or verts.shape[1] != 3:
        raise MeshError("vertices must be (n, 3)")
    if tris.ndim != 2 or tris.shape[1] != 3:
        raise MeshError("triangles must be (f, 3)")
    if tris.min() < 0 or tris.max() >= len(verts):
        raise MeshError("triangle index out of range")

    edges = _edge_table(tris)
    boundary = [e for e, faces in edges.items() if len(faces) == 1]
    nonmanifold = [e for e, faces in edges.items() if len(faces) > 2]
    if nonmanifold:
        raise MeshError(f"non-manifold edges: {nonmanifold[:5]} (showing up to 5)")
    if boundary:
        raise MeshError(f"open boundary edges: {boundary[:5]} (showing up to 5); "
                        "a compact surface without boundary is required")
    if not _consistently_oriented(tris):
        raise MeshError("triangulation is not consistently oriented")

    n_v, n_e, n_f = len(verts), len(edges), len(tris)
    chi = n_v - n_e + n_f
    if chi % 2 != 0 or chi > 2:
        raise MeshError(f"Euler characteristic {chi} inconsistent with a closed "
                        "orientable surface (expected 2 - 2*genus)")

    areas = _triangle_areas(verts, tris)
    if np.any(areas <= 0):
        bad = np.nonzero(areas <= 0)[0]
        raise MeshError(f"non-positive triangle areas at {bad[:5].tolist()}")

    masses = np.zeros(n_v)
    np.add.at(masses, tris.ravel(), np.repeat(areas / 3.0, 3))
    defects = _angle_defects(verts, tris)
    curv = defects / masses
    grad_bound = _curvature_gradient_bound(verts, tris, curv)
    return Geometry(kind=MESH, positions=verts, masses=masses, basepoint=basepoint,
                    K_lower=float(curv.min()), L_ricci_grad=grad_bound,
                    vertices=verts, triangles=tris)


def _parse_off(text):
    tokens = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            tokens.extend(line.split())
    if not tokens or tokens[0] != "OFF":
        raise MeshError("not an OFF file (missing OFF header)")
    try:
        nv, nf = int(tokens[1]), int(tokens[2])
        pos = 4  # skip edge count
        verts = np.array(tokens[pos:pos + 3 * nv], dtype=float).reshape(nv, 3)
        pos += 3 * nv
        tris = []
        for _ in range(nf):
            k = int(tokens[pos])
            if k != 3:
                raise MeshError(f"only triangle faces supported, got {k}-gon")
            tris.append([int(tokens[pos + 1]), int(tokens[pos + 2]), int(tokens[pos + 3])])
            pos += k + 1
    except (ValueError, IndexError) as exc:
        raise MeshError(f"OFF parse failure: {exc}") from exc
    return verts, np.array(tris, dtype=np.int64)


def _parse_obj(text):
    verts, tris = [], []
    try:
        for ln, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if parts[0] == "v":
                verts.append([float(p) for p in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(p.split("/")[0]) - 1 for p in parts[1:]]
                if len(idx) != 3:
                    raise MeshError(f"line {ln}: only triangle faces supported")
                tris.append(idx)
    except (ValueError, IndexError) as exc:
        raise MeshError(f"OBJ parse failure: {exc}") from exc
    if not verts or not tris:
        raise MeshError("OBJ file has no vertices or no faces")
    return np.array(verts, dtype=float), np.array(tris, dtype=np.int64)


def _edge_table(tris):
    edges = {}
    for f, (a, b, c) in enumerate(tris):
        for u, v in ((a, b), (b, c), (c, a)):
            key = (u, v) if u < v else (v, u)
            edges.setdefault(key, []).append(f)
    return edges


def _consistently_oriented(tris):
    seen = set()
    for a, b, c in tris:
        for u, v in ((a, b), (b, c), (c, a)):
            if (u, v) in seen:
                return False
            seen.add((u, v))
    return True


def _triangle_areas(verts, tris):
    p0, p1, p2 = verts[tris[:, 0]], verts[tris[:, 1]], verts[tris[:, 2]]
    return 0.5 * np.linalg.norm(np.cross(p1 - p0, p2 - p0), axis=1)


def _corner_angles(verts, tris):
    """Angles at corners (f, 3) matching triangle vertex order."""
    p = verts[tris]  # (f, 3, 3)
    angles = np.empty(tris.shape)
    for i in range(3):
        a = p[:, (i + 1) % 3] - p[:, i]
        b = p[:, (i + 2) % 3] - p[:, i]
        na = np.linalg.norm(a, axis=1)
        nb = np.linalg.norm(b, axis=1)
        cosang = np.einsum("ij,ij->i", a, b) / (na * nb)
        angles[:, i] = np.arccos(np.clip(cosang, -1.0, 1.0))
    return angles


def _angle_defects(verts, tris):
    angles = _corner_angles(verts, tris)
    defect = np.full(len(verts), 2.0 * np.pi)
    np.add.at(defect, tris.ravel(), -angles.ravel())
    return defect


def _curvature_gradient_bound(verts, tris, curv):
    grads = element_gradients_mesh(verts, tris, curv)
    return float(np.linalg.norm(grads, axis=1).max())


# ---------------------------------------------------------------------------
# operators


class _TorusStiffness(LinearOperator):
    """FFT-diagonalized Dirichlet operator on the periodic grid.

    S u = M * ifft(|k|^2 fft(u)); symmetric because the mass is uniform, and
    its generalized eigenvalues against that mass are exactly the lattice
    values (2 pi kx / Lx)^2 + (2 pi ky / Ly)^2.
    """

    def __init__(self, grid_shape, periods, weight):
        nx, ny = grid_shape
        super().__init__(dtype=float, shape=(nx * ny, nx * ny))
        self.grid_shape = grid_shape
        kx = 2.0 * np.pi * np.fft.fftfreq(nx, d=1.0 / nx) / periods[0]
        ky = 2.0 * np.pi * np.fft.fftfreq(ny, d=1.0 / ny) / periods[1]
        self._k2 = kx[:, None] ** 2 + ky[None, :] ** 2
        self._w = weight

    def _matvec(self, u):
        nx, ny = self.grid_shape
        u2 = np.asarray(u).reshape(nx, ny)
        out = np.fft.ifft2(self._k2 * np.fft.fft2(u2)).real
        return (self._w * out).ravel()

    def _rmatvec(self, u):
        return self._matvec(u)


def operators(g: Geometry, lumped: bool = True) -> OperatorPair:
    """Stiffness/mass pair for a geometry.

    Torus: exact Fourier operator plus the uniform lumped mass.  Sphere and
    mesh kinds: cotangent stiffness; lumped (diagonal) mass by default, the
    consistent P1 mass matrix behind ``lumped=False``.  Degenerate triangles
    (area < 1e-14 * mean) are rejected with their indices.
    """
    key = ("operators", lumped)
    if key in g._cache:
        return g._cache[key]
    if g.kind == FLAT_TORUS:
        w = g.masses[0]
        stiff = _TorusStiffness(g.grid_shape, g.periods, w)
        mass = sparse.diags(g.masses)
        pair = OperatorPair(geometry=g, stiffness=stiff, mass=mass, lumped=True)
    else:
        areas = _triangle_areas(g.vertices, g.triangles)
        tiny = areas < 1e-14 * areas.mean()
        if np.any(tiny):
            raise MeshError(f"degenerate triangles (area < 1e-14 * mean): "
                            f"{np.nonzero(tiny)[0][:10].tolist()}")
        stiff = cotangent_stiffness(g.vertices, g.triangles)
        if lumped:
            mass = sparse.diags(g.masses)
        else:
            mass = _consistent_mass(g.vertices, g.triangles, len(g.positions))
        pair = OperatorPair(geometry=g, stiffness=stiff, mass=mass, lumped=lumped)
    g._cache[key] = pair
    return pair


def cotangent_stiffness(verts, tris, tri_weights=None) -> sparse.csr_matrix:
    """Cotangent Dirichlet stiffness; optional per-element weights realize
    weighted forms like the R-weighted Rayleigh quotient."""
    n = len(verts)
    rows, cols, vals = [], [], []
    p = verts[tris]
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        a = p[:, j] - p[:, i]
        b = p[:, k] - p[:, i]
        cross = np.linalg.norm(np.cross(a, b), axis=1)
        cot = np.einsum("ij,ij->i", a, b) / cross
        half = 0.5 * cot
        if tri_weights is not None:
            half = half * tri_weights
        vj, vk = tris[:, j], tris[:, k]
        rows.extend([vj, vk, vj, vk])
        cols.extend([vk, vj, vj, vk])
        vals.extend([-half, -half, half, half])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    S = sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))
    S.sum_duplicates()
    return S


def _consistent_mass(verts, tris, n) -> sparse.csr_matrix:
    areas = _triangle_areas(verts, tris)
    rows, cols, vals = [], [], []
    for i in range(3):
        for j in range(3):
            rows.append(tris[:, i])
            cols.append(tris[:, j])
            vals.append(areas * (1.0 / 6.0 if i == j else 1.0 / 12.0))
    M = sparse.csr_matrix((np.concatenate(vals),
                           (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    M.sum_duplicates()
    return M


# ---------------------------------------------------------------------------
# distance and curvature


def geodesic_distance(g: Geometry, o: int | None = None) -> ScalarField:
    """Distance from every sample to the basepoint.

    Closed forms on the analytic kinds (lattice-minimum on the torus,
    r * arccos on the sphere); on mesh kinds, Dijkstra over the edge graph
    augmented with one-ring unfolding shortcuts (each pair of triangles
    sharing an edge is unfolded into the plane and the straight segment
    between the opposite vertices is added when it crosses the shared edge).
    """
    o = g.basepoint if o is None else int(o)
    if not 0 <= o < g.n_samples:
        raise ParameterError(f"basepoint {o} out of range")
    if g.kind == FLAT_TORUS:
        Lx, Ly = g.periods
        delta = np.abs(g.positions - g.positions[o])
        dx = np.minimum(delta[:, 0], Lx - delta[:, 0])
        dy = np.minimum(delta[:, 1], Ly - delta[:, 1])
        return ScalarField(g, np.hypot(dx, dy))
    if g.kind == ROUND_SPHERE:
        r = g.radius
        cosang = (g.positions @ g.positions[o]) / r**2
        return ScalarField(g, r * np.arccos(np.clip(cosang, -1.0, 1.0)))
    graph = _mesh_distance_graph(g)
    dist = _csgraph_dijkstra(graph, directed=False, indices=o)
    return ScalarField(g, dist)


def _mesh_distance_graph(g: Geometry) -> sparse.csr_matrix:
    if "distgraph" in g._cache:
        return g._cache["distgraph"]
    verts, tris = g.vertices, g.triangles
    n = len(verts)
    rows, cols, vals = [], [], []

    edges = {}
    for f, (a, b, c) in enumerate(tris):
        for u, v, w in ((a, b, c), (b, c, a), (c, a, b)):
            key = (u, v) if u < v else (v, u)
            edges.setdefault(key, []).append(w)
    for (u, v), opp in edges.items():
        d = np.linalg.norm(verts[u] - verts[v])
        rows.append(u); cols.append(v); vals.append(d)
        if len(opp) == 2:
            s = _unfolded_shortcut(verts, u, v, opp[0], opp[1])
            if s is not None:
                rows.append(opp[0]); cols.append(opp[1]); vals.append(s)

    graph = sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))
    g._cache["distgraph"] = graph
    return graph


def _unfolded_shortcut(verts, a, b, p, q):
    """Unfold triangles (a,b,p) and (a,b,q) across edge ab; return |pq| if the
    straight segment crosses the shared edge."""
    e = np.linalg.norm(verts[b] - verts[a])
    ap, bp = np.linalg.norm(verts[p] - verts[a]), np.linalg.norm(verts[p] - verts[b])
    aq, bq = np.linalg.norm(verts[q] - verts[a]), np.linalg.norm(verts[q] - verts[b])
    px = (e**2 + ap**2 - bp**2) / (2.0 * e)
    py = -np.sqrt(max(ap**2 - px**2, 0.0))
    qx = (e**2 + aq**2 - bq**2) / (2.0 * e)
    qy = np.sqrt(max(aq**2 - qx**2, 0.0))
    if qy - py <= 0:
        return None
    xstar = px + (qx - px) * (-py) / (qy - py)
    if 0.0 <= xstar <= e:
        return float(np.hypot(qx - px, qy - py))
    return None


def gaussian_curvature(g: Geometry) -> ScalarField:
    """Gaussian curvature K per sample (scalar curvature is R = 2K).

    Exact constants for the analytic kinds; angle defect over one-third
    vertex area for meshes, which makes the discrete Gauss--Bonnet identity
    sum(K * mass) = 2 * pi * chi exact.
    """
    if g.kind == FLAT_TORUS:
        return ScalarField(g, np.zeros(g.n_samples))
    if g.kind == ROUND_SPHERE:
        return ScalarField(g, np.full(g.n_samples, 1.0 / g.radius**2))
    defects = _angle_defects(g.vertices, g.triangles)
    return ScalarField(g, defects / g.masses)


def angle_defect_total(g: Geometry) -> float:
    if g.kind != MESH and g.triangles is None:
        raise ParameterError("angle defects require a triangulated geometry")
    return float(_angle_defects(g.vertices, g.triangles).sum())


def euler_characteristic(g: Geometry) -> int:
    edges = set()
    for a, b, c in g.triangles:
        for u, v in ((a, b), (b, c), (c, a)):
            edges.add((u, v) if u < v else (v, u))
    return int(len(g.positions) - len(edges) + len(g.triangles))


# ---------------------------------------------------------------------------
# gradients and quadrature


def integrate(g: Geometry, values: np.ndarray) -> float:
    """Lumped quadrature of a per-sample field."""
    return float(g.masses @ np.asarray(values))


def element_gradients_mesh(verts, tris, values) -> np.ndarray:
    """P1 gradient per triangle (f, 3), constant on each element."""
    p0, p1, p2 = verts[tris[:, 0]], verts[tris[:, 1]], verts[tris[:, 2]]
    normal = np.cross(p1 - p0, p2 - p0)
    areas2 = np.linalg.norm(normal, axis=1)
    nhat = normal / areas2[:, None]
    u0, u1, u2 = values[tris[:, 0]], values[tris[:, 1]], values[tris[:, 2]]
    grad = (u0[:, None] * np.cross(nhat, p2 - p1)
            + u1[:, None] * np.cross(nhat, p0 - p2)
            + u2[:, None] * np.cross(nhat, p1 - p0)) / areas2[:, None]
    return grad


def torus_gradient(g: Geometry, values: np.ndarray) -> np.ndarray:
    """Spectral (FFT) gradient on the periodic grid, (n, 2)."""
    nx, ny = g.grid_shape
    Lx, Ly = g.periods
    u = values.reshape(nx, ny)
    uh = np.fft.fft2(u)
    kx = 2.0 * np.pi * np.fft.fftfreq(nx, d=1.0 / nx) / Lx
    ky = 2.0 * np.pi * np.fft.fftfreq(ny, d=1.0 / ny) / Ly
    gx = np.fft.ifft2(1j * kx[:, None] * uh).real
    gy = np.fft.ifft2(1j * ky[None, :] * uh).real
    return np.column_stack([gx.ravel(), gy.ravel()])


def vertex_gradients(g: Geometry, values: np.ndarray | None = None, values_grads=None) -> np.ndarray:
    """Per-vertex gradient vectors by area-weighted averaging of element
    gradients, projected onto the vertex tangent plane."""
    verts, tris = g.vertices, g.triangles
    grads = values_grads
    if grads is None:
        grads = element_gradients_mesh(verts, tris, np.asarray(values))
    areas = _triangle_areas(verts, tris)
    acc = np.zeros((len(verts), 3))
    wacc = np.zeros(len(verts))
    np.add.at(acc, tris.ravel(), np.repeat(grads * areas[:, None], 3, axis=0))
    np.add.at(wacc, tris.ravel(), np.repeat(areas, 3))
    vg = acc / wacc[:, None]
    normals = vertex_normals(g)
    vg -= np.einsum("ij,ij->i", vg, normals)[:, None] * normals
    return vg


def vertex_normals(g: Geometry) -> np.ndarray:
    if "vnormals" in g._cache:
        return g._cache["vnormals"]
    verts, tris = g.vertices, g.triangles
    p0, p1, p2 = verts[tris[:, 0]], verts[tris[:, 1]], verts[tris[:, 2]]
    fn = np.cross(p1 - p0, p2 - p0)
    acc = np.zeros((len(verts), 3))
    np.add.at(acc, tris.ravel(), np.repeat(fn, 3, axis=0))
    acc /= np.linalg.norm(acc, axis=1, keepdims=True)
    g._cache["vnormals"] = acc
    return acc


def weighted_dirichlet(g: Geometry, values: np.ndarray, weight: np.ndarray,
                       extra: np.ndarray | None = None) -> float:
    """integral of weight * |grad u|^2 (* extra) dmu.

    Torus: lumped sum with the spectral per-sample gradient.  Triangulated
    kinds: per-element gradients with the weight averaged over the three
    corners of each element.
    """
    values = np.asarray(values)
    weight = np.asarray(weight)
    if g.kind == FLAT_TORUS:
        g2 = _torus_grad_squared(g, values)
        w = weight if extra is None else weight * np.asarray(extra)
        return float(g.masses @ (w * g2))
    verts, tris = g.vertices, g.triangles
    grads = element_gradients_mesh(verts, tris, values)
    g2 = np.einsum("ij,ij->i", grads, grads)
    w = weight if extra is None else weight * np.asarray(extra)
    wbar = w[tris].mean(axis=1)
    areas = _mesh_quad_areas(g)
    return float(np.sum(areas * wbar * g2))


def _mesh_quad_areas(g: Geometry) -> np.ndarray:
    """Element quadrature areas; spherical areas on the round sphere so the
    element and lumped quadratures share a total measure."""
    if "quadareas" in g._cache:
        return g._cache["quadareas"]
    if g.kind == ROUND_SPHERE:
        u = g.vertices / g.radius
        a, b, c = u[g.triangles[:, 0]], u[g.triangles[:, 1]], u[g.triangles[:, 2]]
        num = np.abs(np.einsum("ij,ij->i", a, np.cross(b, c)))
        den = 1.0 + np.einsum("ij,ij->i", a, b) + np.einsum("ij,ij->i", b, c) \
            + np.einsum("ij,ij->i", c, a)
        areas = 2.0 * np.arctan2(num, den) * g.radius**2
    else:
        areas = _triangle_areas(g.vertices, g.triangles)
    g._cache["quadareas"] = areas
    return areas


def _torus_grad_squared(g: Geometry, values: np.ndarray) -> np.ndarray:
    grad = torus_gradient(g, values)
    return np.einsum("ij,ij->i", grad, grad)


def pointwise_gradient_squared(g: Geometry, values: np.ndarray) -> np.ndarray:
    """Per-sample |grad u|^2 (vertex-averaged on triangulated kinds)."""
    if g.kind == FLAT_TORUS:
        return _torus_grad_squared(g, values)
    vg = vertex_gradients(g, values)
    return np.einsum("ij,ij->i", vg, vg)
