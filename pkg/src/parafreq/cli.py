"""Configuration-driven experiment runner.

``parafreq run config.toml`` executes the selected experiment suite
(frequency, harnack, kernel-bounds, ricci-flow, or all), writing per
experiment a delimited trace, a JSON verdict file, a gnuplot-dialect plot
script, and a rendered PNG figure.  Exit status is 0 iff every verdict
passes.  Config parsing is strict: unknown keys are fatal, randomness is
seeded, and identical configs produce byte-identical CSV output.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import frequency as fr
from . import geometry as geo
from . import harnack as ha
from . import plotting
from . import ricciflow as rf
from . import spectral as sp
from .errors import ConfigError

EXPERIMENTS = ("frequency", "harnack", "kernel-bounds", "ricci-flow", "all")
PRESETS = ("eigenmode", "random-bandlimited", "bump")
GEOMETRY_KINDS = ("torus", "sphere", "icosphere-mesh", "mesh-file")


# ---------------------------------------------------------------------------
# configuration


@dataclass
class GeometrySpec:
    kind: str = "torus"
    Lx: float = 2.0 * np.pi
    Ly: float = 2.0 * np.pi
    resolution: int = 64
    radius: float = 1.0
    subdivision: int = 4
    path: str = ""
    basepoint: int = 0


@dataclass
class InitialDataSpec:
    preset: str = "eigenmode"
    k: int = 1
    seed: int = 0
    band: int = 16
    center: int = 0
    width: float = 0.5


@dataclass
class GridSpec:
    start: float = 0.01
    stop: float = 1.0
    points: int = 200
    spacing: str = "log"


@dataclass
class ToleranceSpec:
    monotonicity: float = 1e-6
    positivity_scale: float = 1e-3
    vanishing: float = 1e-3


@dataclass
class FlowSpec:
    t_end: float = 0.3
    dt: float = 1e-3
    delta: float = 0.05
    seed: int = 7
    modes: int = 100


@dataclass
class ExperimentConfig:
    experiment: str = "frequency"
    geometry: GeometrySpec = field(default_factory=GeometrySpec)
    initial_data: InitialDataSpec = field(default_factory=InitialDataSpec)
    t_grid: GridSpec = field(default_factory=GridSpec)
    tolerances: ToleranceSpec = field(default_factory=ToleranceSpec)
    flow: FlowSpec = field(default_factory=FlowSpec)
    horizon: float = 1.0
    modes: int = 200
    eps: float = 0.5
    output_dir: str = "parafreq-out"

    def to_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(canon.encode()).hexdigest()[:16]


_SECTIONS = {
    "geometry": GeometrySpec,
    "initial_data": InitialDataSpec,
    "t_grid": GridSpec,
    "tolerances": ToleranceSpec,
    "flow": FlowSpec,
}


def _build_section(cls, data, path):
    allowed = {f.name: f for f in fields(cls)}
    out = cls()
    for key, value in data.items():
        if key not in allowed:
            raise ConfigError(f"unknown key {path}.{key!r}")
        setattr(out, key, type(getattr(out, key))(value)
                if not isinstance(value, type(getattr(out, key))) else value)
    return out


def parse_config(source: str, fmt: str | None = None) -> ExperimentConfig:
    """Parse TOML or JSON text into a validated configuration.

    Unknown keys are rejected by name (strict mode); defaults fill the rest.
    """
    data = _load_config_text(source, fmt)
    if not isinstance(data, dict):
        raise ConfigError("config root must be a table/object")
    cfg = ExperimentConfig()
    top_allowed = {f.name for f in fields(ExperimentConfig)}
    for key, value in data.items():
        if key not in top_allowed:
            raise ConfigError(f"unknown key {key!r}")
        if key in _SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"{key} must be a table/object")
            setattr(cfg, key, _build_section(_SECTIONS[key], value, key))
        else:
            default = getattr(cfg, key)
            setattr(cfg, key, type(default)(value))
    _validate(cfg)
    return cfg


def _load_config_text(source, fmt):
    text = source
    if fmt is None:
        stripped = text.lstrip()
        fmt = "json" if stripped.startswith("{") else "toml"
    fmt = fmt.lower()
    if fmt == "json":
        try:
            return json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"JSON syntax error at line {exc.lineno}, "
                              f"column {exc.colno}: {exc.msg}") from exc
    if fmt == "toml":
        try:
            import tomllib
        except ModuleNotFoundError:
            import tomli as tomllib
        try:
            return tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"TOML syntax error: {exc}") from exc
    raise ConfigError(f"unknown config format {fmt!r}")


def _validate(cfg: ExperimentConfig):
    if cfg.experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {cfg.experiment!r}; "
                          f"expected one of {EXPERIMENTS}")
    if cfg.geometry.kind not in GEOMETRY_KINDS:
        raise ConfigError(f"unknown geometry kind {cfg.geometry.kind!r}")
    if cfg.initial_data.preset not in PRESETS:
        raise ConfigError(f"unknown initial-data preset "
                          f"{cfg.initial_data.preset!r}")
    if cfg.t_grid.spacing not in ("log", "linear"):
        raise ConfigError(f"grid spacing must be log|linear, got "
                          f"{cfg.t_grid.spacing!r}")
    if cfg.t_grid.start <= 0 or cfg.t_grid.stop <= cfg.t_grid.start:
        raise ConfigError("need 0 < t_grid.start < t_grid.stop")
    if cfg.t_grid.stop > cfg.horizon:
        raise ConfigError("t_grid.stop exceeds horizon")


def serialize_config(cfg: ExperimentConfig) -> str:
    return json.dumps(cfg.to_dict(), sort_keys=True, indent=2)


# ---------------------------------------------------------------------------
# experiment assembly


def _build_geometry(spec: GeometrySpec) -> geo.Geometry:
    if spec.kind == "torus":
        return geo.build_analytic_geometry(
            "flat-torus", periods=(spec.Lx, spec.Ly),
            resolution=spec.resolution, basepoint=spec.basepoint)
    if spec.kind == "sphere":
        return geo.build_analytic_geometry(
            "round-sphere", radius=spec.radius, subdivision=spec.subdivision,
            basepoint=spec.basepoint)
    if spec.kind == "icosphere-mesh":
        verts, tris = geo.icosphere(spec.subdivision)
        return geo.mesh_geometry(verts * spec.radius, tris,
                                 basepoint=spec.basepoint)
    with open(spec.path, "rb") as fh:
        fmt = "OBJ" if spec.path.lower().endswith(".obj") else "OFF"
        return geo.load_mesh(fh.read(), fmt, basepoint=spec.basepoint)


def _build_grid(spec: GridSpec) -> np.ndarray:
    if spec.spacing == "log":
        return np.geomspace(spec.start, spec.stop, spec.points)
    return np.linspace(spec.start, spec.stop, spec.points)


def _build_initial_data(spec: InitialDataSpec, g: geo.Geometry,
                        basis: sp.SpectralBasis) -> np.ndarray:
    if spec.preset == "eigenmode":
        if not 1 <= spec.k < basis.n_modes:
            raise ConfigError(f"eigenmode index {spec.k} out of range")
        return basis.fields[spec.k].copy()
    if spec.preset == "random-bandlimited":
        if not 2 <= spec.band <= basis.n_modes:
            raise ConfigError(f"band {spec.band} out of range")
        rng = np.random.default_rng(spec.seed)
        c = np.zeros(basis.n_modes)
        c[:spec.band] = rng.standard_normal(spec.band)
        return basis.synthesize(c)
    d = geo.geodesic_distance(g, spec.center).values
    return np.exp(-(d**2) / (2.0 * spec.width**2))


# ---------------------------------------------------------------------------
# run report


@dataclass
class RunReport:
    config_hash: str
    experiments: dict
    files: list
    wall_clock: float
    all_passed: bool

    def to_json(self) -> str:
        return json.dumps({
            "config_hash": self.config_hash,
            "experiments": self.experiments,
            "files": self.files,
            "wall_clock_s": self.wall_clock,
            "all_passed": self.all_passed,
        }, sort_keys=True, indent=2)


def _verdict_record(name, verdict):
    rec = json.loads(verdict.to_json())
    rec["name"] = name
    return rec


def run(cfg: ExperimentConfig) -> RunReport:
    """Execute the configured suite and write traces, verdicts, scripts,
    and figures; partial outputs of a failing experiment keep a ``.partial``
    suffix."""
    t_start = time.time()
    out_root = os.environ.get("PARAFREQ_OUT", "")
    out_dir = os.path.join(out_root, cfg.output_dir) if out_root else cfg.output_dir
    os.makedirs(out_dir, exist_ok=True)
    chosen = [cfg.experiment] if cfg.experiment != "all" else \
        ["frequency", "harnack", "kernel-bounds", "ricci-flow"]
    experiments = {}
    files = [os.path.join(out_dir, "config.json")]
    with open(files[0], "w") as fh:
        fh.write(serialize_config(cfg))
    all_passed = True
    for name in chosen:
        runner = _RUNNERS[name]
        prefix = os.path.join(out_dir, name.replace("-", "_"))
        try:
            record, produced = runner(cfg, prefix)
        except Exception as exc:  # noqa: BLE001 - reported with context
            for f in _existing_partials(prefix):
                os.replace(f, f + ".partial")
            experiments[name] = {"error": f"{type(exc).__name__}: {exc}"}
            all_passed = False
            continue
        experiments[name] = record
        files.extend(produced)
        all_passed &= all(v.get("pass", True) for v in record["verdicts"])
    for f in files:
        if not (os.path.exists(f) and os.path.getsize(f) > 0):
            raise RuntimeError(f"claimed output file missing or empty: {f}")
    report = RunReport(config_hash=cfg.hash(), experiments=experiments,
                       files=files, wall_clock=time.time() - t_start,
                       all_passed=all_passed)
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        fh.write(report.to_json())
    return report


def _existing_partials(prefix):
    import glob
    return [f for f in glob.glob(prefix + "*") if not f.endswith(".partial")]


def _write_csv(path, header, columns):
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in zip(*columns):
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def _finish_outputs(prefix, csv_name, columns_to_plot, title):
    gp = emit_plot_script(csv_name, columns_to_plot, title)
    script = prefix + "_plot.gp"
    with open(script, "w") as fh:
        fh.write(gp)
    png = prefix + ".png"
    plotting.render_trace_figure(csv_name, columns_to_plot, title, png)
    return [script, png]


# ---------------------------------------------------------------------------
# individual experiments


def _frequency_experiment(cfg: ExperimentConfig, prefix: str):
    g = _build_geometry(cfg.geometry)
    ops = geo.operators(g)
    basis = sp.eigenbasis(ops, min(cfg.modes, g.n_samples - 2))
    u0 = _build_initial_data(cfg.initial_data, g, basis)
    grid = _build_grid(cfg.t_grid)
    fcfg = fr.build_frequency_config(g, basis, u0, cfg.geometry.basepoint,
                                     cfg.horizon, grid)
    cache = {}
    trace = fr.frequency_trace(fcfg, kernel_cache=cache)
    tol = cfg.tolerances.monotonicity
    verdicts = [
        _verdict_record("N-monotone", fr.monotonicity_verdict(trace, "N", tol)),
        _verdict_record("I-monotone", fr.monotonicity_verdict(trace, "I", tol)),
    ]
    identity = _zd_identity_spot_check(g, basis, u0, cfg)
    dmon = identity.pop("D_monotone")
    verdicts.append(_verdict_record(f"{identity['D_quantity']}-monotone", dmon))
    lee = fr.lee_inequality_check(fcfg, kernel_cache=cache)
    t0 = float(trace.t[np.argmin(np.abs(trace.t - 0.5 * trace.t[-1]))])
    vob = fr.vanishing_order_bound(trace, t0, tol=cfg.tolerances.vanishing)
    verdicts.append({"name": "vanishing-order-bound", "pass": vob["passed"],
                     **{k: v for k, v in vob.items() if k != "passed"}})
    fit = fr.d_lower_bound_diagnostic(trace)

    csv_path = prefix + "_trace.csv"
    trace.to_csv(csv_path)
    produced = [csv_path]
    produced += _finish_outputs(prefix, csv_path, ["t", "I", "N"],
                                "parabolic frequency")
    record = {
        "verdicts": verdicts,
        "identity": identity,
        "lee": {"largest_passing_t": lee["largest_passing_t"],
                "factor": lee["factor"]},
        "d_lower_fit": json.loads(fit.to_json()),
        "provenance": trace.provenance,
    }
    vpath = prefix + "_verdicts.json"
    with open(vpath, "w") as fh:
        json.dump(record, fh, sort_keys=True, indent=2, default=float)
    produced.append(vpath)
    return record, produced


def _zd_identity_spot_check(g, basis, u0, cfg, points=(0.25, 0.5, 0.75),
                            h=1e-3):
    worst = 0.0
    dmon = None
    quantity = "D"
    for frac in points:
        tc = cfg.t_grid.start + frac * (cfg.t_grid.stop - cfg.t_grid.start)
        sub = fr.build_frequency_config(
            g, basis, u0, cfg.geometry.basepoint, cfg.horizon,
            np.array([tc - h, tc, tc + h]))
        tr = fr.frequency_trace(sub)
        rep = fr.check_zd_identities(tr, sub, cfg.tolerances.monotonicity)
        worst = max(worst, rep.get("dzdt_max_rel_err", 0.0))
        quantity = rep["D_quantity"]
    full = fr.build_frequency_config(
        g, basis, u0, cfg.geometry.basepoint, cfg.horizon,
        np.linspace(cfg.t_grid.start, cfg.t_grid.stop, 40))
    tr = fr.frequency_trace(full)
    rep = fr.check_zd_identities(tr, full, cfg.tolerances.monotonicity)
    dmon = rep["D_monotone"]
    return {"dzdt_max_rel_err": worst, "stencil_h": h,
            "D_quantity": quantity, "D_monotone": dmon}


def _harnack_experiment(cfg: ExperimentConfig, prefix: str):
    g = _build_geometry(cfg.geometry)
    basis = None
    if g.kind == geo.MESH:
        basis = sp.eigenbasis(geo.operators(g), min(cfg.modes, g.n_samples - 2))
    ts = np.geomspace(max(cfg.t_grid.start, 0.05), cfg.t_grid.stop, 8)
    o = cfg.geometry.basepoint
    d2 = geo.geodesic_distance(g, o).values ** 2
    scale_tol = cfg.tolerances.positivity_scale
    rows_t, rows_min, rows_scaled = [], [], []
    verdicts = []
    eps = cfg.eps
    fitted_c0 = 0.0
    largest_passing = None
    for t in ts:
        H = sp.heat_kernel(g, basis, o, t)
        T = ha.harnack_tensor(H, g)
        verdict = ha.check_positivity(T, np.zeros(g.n_samples),
                                      tol=scale_tol / (2.0 * t))
        rows_t.append(t)
        rows_min.append(verdict.min_eigenvalue)
        rows_scaled.append(verdict.min_eigenvalue * 2.0 * t)
        if verdict.passed:
            largest_passing = float(t)
        mins = T.min_eigenvalues()
        need = np.max(-mins / eps - d2 / (4.0 * t))
        fitted_c0 = max(fitted_c0, float(max(need, 0.0)))
    agg = {"name": "harnack-positivity", "pass": largest_passing == float(ts[-1]),
           "largest_passing_t": largest_passing, "tol_scale": scale_tol}
    verdicts.append(agg)
    verdicts.append({"name": "fitted-C0", "pass": True, "eps": eps,
                     "C0": fitted_c0})
    csv_path = prefix + "_trace.csv"
    _write_csv(csv_path, ["t", "min_eig", "min_eig_times_2t"],
               [np.array(rows_t), np.array(rows_min), np.array(rows_scaled)])
    produced = [csv_path]
    produced += _finish_outputs(prefix, csv_path, ["t", "min_eig_times_2t"],
                                "Harnack tensor minimum eigenvalue")
    record = {"verdicts": verdicts}
    vpath = prefix + "_verdicts.json"
    with open(vpath, "w") as fh:
        json.dump(record, fh, sort_keys=True, indent=2, default=float)
    produced.append(vpath)
    return record, produced


def _kernel_bounds_experiment(cfg: ExperimentConfig, prefix: str):
    g = _build_geometry(cfg.geometry)
    basis = None
    if g.kind == geo.MESH:
        basis = sp.eigenbasis(geo.operators(g), min(cfg.modes, g.n_samples - 2))
    o = cfg.geometry.basepoint
    coarse_t = np.geomspace(max(cfg.t_grid.start, 0.05), cfg.t_grid.stop, 8)
    fine_t = np.geomspace(max(cfg.t_grid.start, 0.05), cfg.t_grid.stop, 16)
    coarse = [sp.heat_kernel(g, basis, o, t) for t in coarse_t]
    fine = [sp.heat_kernel(g, basis, o, t) for t in fine_t]
    verdicts = []
    fits = {}
    for form in (ha.UPPER_KERNEL, ha.LOWER_KERNEL, ha.GRADIENT, ha.B_OF_A):
        fc = ha.fit_bound_constant(coarse, form)
        ff = ha.fit_bound_constant(fine, form)
        stable = abs(ff.value - fc.value) / fc.value <= 0.2
        fits[form] = json.loads(fc.to_json())
        verdicts.append({
            "name": f"bound-{form}", "form": form, "value": fc.value,
            "refined_value": ff.value, "slack_min": fc.slack_min,
            "pass": bool(np.isfinite(fc.value) and fc.value > 0
                         and fc.slack_min >= 0 and stable),
        })
    per_t = {form: [] for form in fits}
    for H in coarse:
        for form in fits:
            per_t[form].append(ha.fit_bound_constant([H], form).value)
    csv_path = prefix + "_trace.csv"
    _write_csv(csv_path, ["t", "C_upper", "C_lower", "B_gradient", "B_of_A"],
               [coarse_t] + [np.array(per_t[f]) for f in
                             (ha.UPPER_KERNEL, ha.LOWER_KERNEL, ha.GRADIENT,
                              ha.B_OF_A)])
    produced = [csv_path]
    produced += _finish_outputs(prefix, csv_path,
                                ["t", "C_upper", "C_lower"], "kernel bounds")
    record = {"verdicts": verdicts, "fitted_constants": fits}
    vpath = prefix + "_verdicts.json"
    with open(vpath, "w") as fh:
        json.dump(record, fh, sort_keys=True, indent=2, default=float)
    produced.append(vpath)
    return record, produced


def _ricci_flow_experiment(cfg: ExperimentConfig, prefix: str):
    spec = cfg.geometry
    if spec.kind == "torus":
        spec = GeometrySpec(kind="sphere", radius=1.0,
                            subdivision=min(spec.subdivision, 3))
    g = _build_geometry(spec)
    fspec = cfg.flow
    tol = cfg.tolerances.monotonicity
    verdicts = []

    # round homothety oracle
    st0 = rf.init_flow(g, np.zeros(g.n_samples))
    round_end = min(fspec.t_end, 0.4)
    traj0 = rf.run_flow(st0, round_end, fspec.dt)
    ts0 = traj0.times
    e2u = np.array([float(np.exp(2.0 * s.u).mean()) for s in traj0.states])
    hom_err = float(np.abs(e2u - (1.0 - 2.0 * ts0)).max())
    verdicts.append({"name": "round-homothety", "pass": hom_err < 1e-6,
                     "max_err": hom_err})
    gb_rel = traj0.gauss_bonnet_drift / (8.0 * np.pi)
    verdicts.append({"name": "gauss-bonnet", "pass": gb_rel < 1e-3,
                     "rel_drift": gb_rel})

    # perturbed flow with J and surface Harnack
    ops = geo.operators(g)
    basis = sp.eigenbasis(ops, min(fspec.modes, g.n_samples - 2))
    rng = np.random.default_rng(fspec.seed)
    l2 = basis.fields[4:9] if basis.n_modes >= 9 else basis.fields[1:4]
    u_init = fspec.delta * (l2.T @ rng.standard_normal(l2.shape[0]))
    st = rf.init_flow(g, u_init)
    traj = rf.run_flow(st, fspec.t_end, fspec.dt)
    v, basis = rf.backward_heat_along_flow(traj, basis.fields[1].copy(),
                                           basis=basis)
    jt = rf.j_trace(traj, v, basis=basis,
                    lambda_every=max(1, len(traj.states) // 40))
    for name, verdict in jt.verdicts(tol=tol).items():
        verdicts.append(_verdict_record(f"perturbed-{name}-monotone", verdict))
    hk_times = [t for t in (0.05, 0.1, 0.2, 0.3) if t <= fspec.t_end]
    worst = None
    for t in hk_times:
        s_at = traj.state_at(t)
        _, verdict = ha.surface_flow_harnack(
            s_at.scalar_curvature(), g, s_at.t, conformal_u=s_at.u,
            tol=cfg.tolerances.positivity_scale * float(s_at.R.max()))
        if worst is None or verdict.min_eigenvalue < worst["min_eig"]:
            worst = {"min_eig": verdict.min_eigenvalue, "t": t,
                     "pass": verdict.passed}
    if worst is not None:
        verdicts.append({"name": "surface-harnack", **worst})

    csv_path = prefix + "_jtrace.csv"
    jt.to_csv(csv_path)
    produced = [csv_path]
    produced += _finish_outputs(prefix, csv_path, ["t", "J"],
                                "Ricci flow frequency J(t)")
    ckpt = prefix + "_checkpoints.json"
    idx = np.linspace(0, len(traj.states) - 1, min(9, len(traj.states))).astype(int)
    with open(ckpt, "w") as fh:
        fh.write("[" + ",\n".join(traj.states[i].checkpoint_json()
                                  for i in idx) + "]")
    produced.append(ckpt)
    record = {"verdicts": verdicts,
              "diagnostics": {
                  "gauss_bonnet_drift": traj.gauss_bonnet_drift,
                  "measure_identity_residual": traj.measure_identity_residual,
                  "j_identity_rel_err": rf.check_j_identity(jt)}}
    vpath = prefix + "_verdicts.json"
    with open(vpath, "w") as fh:
        json.dump(record, fh, sort_keys=True, indent=2, default=float)
    produced.append(vpath)
    return record, produced


_RUNNERS = {
    "frequency": _frequency_experiment,
    "harnack": _harnack_experiment,
    "kernel-bounds": _kernel_bounds_experiment,
    "ricci-flow": _ricci_flow_experiment,
}


# ---------------------------------------------------------------------------
# plot scripts


def emit_plot_script(trace_file: str, columns, title: str) -> str:
    """Deterministic gnuplot-dialect script plotting named CSV columns."""
    with open(trace_file) as fh:
        header = fh.readline().strip().split(",")
    for c in columns:
        if c not in header:
            raise ConfigError(f"unknown column {c!r}; trace has {header}")
    xname = header[0]
    ynames = [c for c in columns if c != xname]
    rel = os.path.basename(trace_file)
    stem = os.path.splitext(rel)[0]
    lines = [
        "# parafreq plot script (gnuplot)",
        'set datafile separator ","',
        f'set title "{title}"',
        f'set xlabel "{xname}"',
        "set logscale x",
        "set grid",
        "set key left top",
        "set term pngcairo size 900,600",
        f'set output "{stem}.png"',
        "plot " + ", \\\n     ".join(
            f'"{rel}" using (column("{xname}")):(column("{y}")) '
            f'with lines title "{y}"' for y in ynames),
        "",
    ]
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# entry point


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="parafreq",
        description="heat-flow frequency, Harnack, and Ricci-flow checks on "
                    "compact model surfaces")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a config file")
    p_run.add_argument("config", help="TOML or JSON config path")

    p_verify = sub.add_parser("verify-all",
                              help="run every suite on a named geometry")
    p_verify.add_argument("--geometry", default="torus",
                          choices=("torus", "sphere"))
    p_verify.add_argument("--out", default="parafreq-out")

    p_plot = sub.add_parser("plot", help="emit plot script + figure for a trace")
    p_plot.add_argument("trace")
    p_plot.add_argument("--columns", default=None,
                        help="comma list, e.g. t,I,N (default: all)")
    p_plot.add_argument("--title", default="parafreq trace")

    args = parser.parse_args(argv)

    if args.command == "plot":
        with open(args.trace) as fh:
            header = fh.readline().strip().split(",")
        columns = args.columns.split(",") if args.columns else header
        script = emit_plot_script(args.trace, columns, args.title)
        out = os.path.splitext(args.trace)[0] + ".gp"
        with open(out, "w") as fh:
            fh.write(script)
        png = os.path.splitext(args.trace)[0] + ".png"
        plotting.render_trace_figure(args.trace, columns, args.title, png)
        print(f"wrote {out} and {png}")
        return 0

    if args.command == "run":
        with open(args.config) as fh:
            text = fh.read()
        fmt = "toml" if args.config.endswith(".toml") else None
        cfg = parse_config(text, fmt)
    else:
        cfg = ExperimentConfig(experiment="all", output_dir=args.out)
        if args.geometry == "sphere":
            cfg.geometry = GeometrySpec(kind="sphere", subdivision=4)
            cfg.flow = FlowSpec()
        cfg.t_grid = GridSpec(start=0.05, stop=1.0, points=60)

    report = run(cfg)
    for name, rec in report.experiments.items():
        if "error" in rec:
            print(f"[{name}] ERROR {rec['error']}")
            continue
        for v in rec["verdicts"]:
            status = "PASS" if v.get("pass", True) else "FAIL"
            print(f"[{name}] {status} {v['name']}")
    print(f"report: {os.path.join(cfg.output_dir, 'report.json')}")
    return 0 if report.all_passed else 1


if __name__ == "__main__":
    sys.exit(main())
