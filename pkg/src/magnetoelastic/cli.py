"""Command line entry point: ``magnetoelastic <subcommand> CONFIG``.

Configs are INI files (or a previous run's ``manifest.json``).  Every run
writes its artifacts atomically plus a manifest echoing the fully resolved
config and the sha256 of each artifact.  Exit codes: 0 success, 2 invalid
input, 3 solver failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import io
import json
import os
import sys
import tempfile
from dataclasses import fields as dc_fields
from pathlib import Path

import numpy as np

from . import __version__
from .constitutive import DefaultMaterial, check_assumptions
from .discretization import Basis, DiscreteField, Mesh, evaluate
from .errors import MagnetoelasticError, SolverFailure, ValidationError
from .hyperstress import KernelSpec, determinant_bound, gagliardo_energy
from .loads import FieldLoad, SpatialProfile, TimeProfile

SCHEMA_VERSION = 1
OUTPUT_ENV = "MAGNETOELASTIC_OUTPUT_DIR"
CONFIG_DIR = Path(__file__).with_name("configs")


# ---------------------------------------------------------------------------
# schema
# ---------------------------------------------------------------------------


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in str(text).replace(";", ",").split(",") if v.strip())


def _bool(text: str) -> bool:
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _load_keys(prefix: str, amplitude: str, time: str = "constant", space: str = "uniform") -> dict:
    return {
        f"{prefix}_amplitude": (_floats, amplitude, "amplitude components (SI units of the load)"),
        f"{prefix}_time": (str, time, "constant | ramp | sinusoid"),
        f"{prefix}_period": (float, 1.0, "s; ramp duration or sinusoid period"),
        f"{prefix}_phase": (float, 0.0, "rad; sinusoid phase"),
        f"{prefix}_space": (str, space, "uniform | gaussian"),
        f"{prefix}_center": (_floats, "0.5, 0.5", "m; gaussian center"),
        f"{prefix}_width": (float, 0.25, "m; gaussian width"),
    }


_MATERIAL_DOC = {
    "rho": "kg/m^3", "tau1": "relaxation time of m", "tau2": "viscosity of the concentration",
    "kappa1": "exchange length^2", "kappa2": "interface energy coefficient", "lame": "Pa",
    "heat_c": "J/(m^3 K)", "mobility": "spatial mobility", "conductivity": "W/(m K)",
}

SCHEMA: dict[str, dict] = {
    "run": {
        "schema_version": (int, SCHEMA_VERSION, "config schema version"),
        "seed": (int, 0, "seed of every Monte-Carlo estimate"),
        "threads": (int, 0, "worker threads; 0 = available parallelism"),
        "output_dir": (str, "magnetoelastic-out", "artifact directory"),
    },
    "material": {
        f.name: ((int if f.type in ("int", int) else float), f.default, _MATERIAL_DOC.get(f.name, "dimensionless"))
        for f in dc_fields(DefaultMaterial)
        if f.name != "name"
    },
    "kernel": {
        "enabled": (_bool, True, "include the nonlocal second-gradient energy"),
        "gamma": (float, 0.6, "fractional order, d/2 - 1 < gamma < 1"),
        "strength": (float, 1e-3, "kernel prefactor"),
        "cutoff_radius": (float, 0.5, "m; kernel support radius (inf allowed)"),
    },
    "mesh": {
        "cells": (int, 8, "cells per axis"),
        "degree": (int, 3, "spline degree"),
        "lower": (_floats, "0, 0", "m; lower box corner"),
        "upper": (_floats, "1, 1", "m; upper box corner"),
        "dirichlet": (str, "", "comma separated clamped facets (statics)"),
    },
    "loads": {
        **_load_keys("body_force", "0, 0"),
        **_load_keys("traction", "0, 0"),
        "traction_facets": (str, "all", "facets carrying the traction"),
        **_load_keys("field", "0, 0"),
        **_load_keys("mu_ext", "0"),
        **_load_keys("theta_ext", "1"),
        "mass_transfer": (float, 0.0, "boundary mass-transfer coefficient M"),
        "heat_transfer": (float, 0.0, "W/(m^2 K); boundary heat-transfer coefficient K"),
        "transfer_facets": (str, "all", "facets with transfer conditions"),
    },
    "initial": {
        "theta0": (float, 1.0, "K; initial temperature"),
        "theta0_wave": (float, 0.0, "K; amplitude of cos(pi x) cos(pi y) added to theta0"),
        "m0": (_floats, "0, 0", "uniform initial magnetization"),
        "m0_wave": (float, 0.0, "amplitude of (cos(pi x), sin(pi y)) added to m0"),
        "zeta0": (float, 0.0, "uniform initial concentration"),
        "zeta0_wave": (float, 0.0, "amplitude of cos(pi x) cos(pi y) added to zeta0"),
        "v0": (_floats, "0, 0", "m/s; uniform initial velocity"),
    },
    "dynamics": {
        "dt": (float, 1.0 / 64, "s; time step"),
        "t_end": (float, 1.0, "s; horizon"),
        "epsilon": (float, 1e-3, "heat-source regularization"),
        "tol_newton": (float, 1e-10, "relative Newton tolerance"),
        "max_newton": (int, 50, "Newton iterations per solve"),
        "retry_floor": (float, 2.0**-10, "smallest substep as a fraction of dt"),
        "snapshot_stride": (int, 0, "steps between coefficient snapshots; 0 = none"),
        "audit_levels": (int, 4, "number of step sizes in the audit study"),
        "monitor_r": (float, 1.2, "exponent of the temperature-gradient monitor"),
    },
    "statics": {
        "zeta_total": (float, float("nan"), "prescribed int zeta; nan = from initial guess"),
        "entropy_total": (float, float("nan"), "prescribed int s; nan = from initial guess"),
        "dirichlet_matrix": (_floats, "1, 0, 0, 1", "row-major matrix of the affine clamp"),
        "dirichlet_offset": (_floats, "0, 0", "m; offset of the affine clamp"),
        "theta_ref": (float, 1.0, "K; temperature of the initial guess"),
        "max_iter": (int, 500, "quasi-Newton iterations per round"),
        "tol_grad": (float, 1e-6, "scaled gradient tolerance"),
        "tol_con": (float, 1e-8, "constraint tolerance"),
        "memory": (int, 12, "quasi-Newton memory"),
        "cn_rounds": (int, 4, "penalty escalation rounds"),
        "cn_samples": (int, 10**6, "Monte-Carlo samples of the injectivity gap"),
        "demag": (_bool, False, "include the stray-field energy"),
        "grid_cells": (int, 64, "cells per axis of the potential grid"),
        "grid_margin": (float, 1.0, "padding of the potential grid in image diameters"),
        "mu0": (float, 1.0, "vacuum permeability"),
        "slice_points": (int, 41, "samples of the CSV field slice along y = mid-height"),
    },
    "magnetostatics": {
        "radius": (float, 1.0, "m; disk radius"),
        "magnetization": (_floats, "1, 0", "A/m; uniform magnetization"),
        "cells": (int, 256, "cells per axis"),
        "margin": (float, 4.0, "padding in disk radii"),
        "mu0": (float, 1.0, "vacuum permeability"),
        "supersample": (int, 8, "sub-cell samples per axis for area fractions"),
        "gap_map": (str, "identity", "identity | shear | double_cover; map whose injectivity gap is reported"),
        "gap_samples": (int, 1_000_000, "Monte-Carlo samples of the gap estimate"),
    },
    "kernel_check": {
        "n_radial": (int, 8, "radial nodes per panel"),
        "n_angular": (int, 8, "angular nodes per panel"),
        "rotations": (int, 3, "random rotations for the frame test"),
    },
}


def schema_text() -> str:
    """Human-readable schema with defaults and unit notes."""
    out = []
    for sec, keys in SCHEMA.items():
        out.append(f"[{sec}]")
        for k, (_, default, doc) in keys.items():
            out.append(f"{k} = {_fmt(default) if not isinstance(default, str) else default}    # {doc}")
        out.append("")
    return "\n".join(out)


def _resolve(raw: dict) -> dict:
    """Apply defaults and parsers; reject unknown sections and keys."""
    cfg = {}
    for sec in raw:
        if sec not in SCHEMA:
            raise ValidationError(f"unknown config section [{sec}]")
    for sec, keys in SCHEMA.items():
        given = dict(raw.get(sec, {}))
        unknown = sorted(set(given) - set(keys))
        if unknown:
            raise ValidationError(f"unknown key(s) in [{sec}]: {', '.join(unknown)}")
        cfg[sec] = {}
        for k, (parse, default, _) in keys.items():
            val = given.get(k, default)
            try:
                cfg[sec][k] = parse(val) if isinstance(val, str) or parse in (_floats,) else parse(val)
            except (TypeError, ValueError) as exc:
                raise ValidationError(f"[{sec}] {k}: {exc}") from None
    if cfg["run"]["schema_version"] != SCHEMA_VERSION:
        raise ValidationError(f"schema_version must be {SCHEMA_VERSION}")
    return cfg


def load_config(path: str | os.PathLike) -> dict:
    """Parse an INI config or a manifest JSON into a resolved config dict.

    Raises
    ------
    ValidationError
        On unreadable files, unknown keys or unparsable values.
    """
    p = Path(path)
    if not p.is_file():
        bundled = CONFIG_DIR / p.name
        if bundled.is_file():
            p = bundled
        else:
            raise ValidationError(f"config file not found: {path}")
    text = p.read_text()
    if text.lstrip().startswith("{"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"invalid JSON config: {exc}") from None
        raw = data.get("config", data)
        return _resolve({s: {k: str(v) for k, v in sec.items()} for s, sec in raw.items()})
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ValidationError(f"invalid config: {exc}") from None
    return _resolve({s: dict(parser[s]) for s in parser.sections()})


def config_to_text(cfg: dict) -> dict:
    """Config with every value rendered as its canonical string."""
    return {sec: {k: _fmt(v) for k, v in keys.items()} for sec, keys in cfg.items()}


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------


def build_model(cfg: dict) -> DefaultMaterial:
    try:
        return DefaultMaterial(**cfg["material"])
    except TypeError as exc:
        raise ValidationError(str(exc)) from None


def build_basis(cfg: dict, dim: int) -> Basis:
    mc = cfg["mesh"]
    tags = tuple(t.strip() for t in mc["dirichlet"].split(",") if t.strip())
    lower, upper = mc["lower"][:dim], mc["upper"][:dim]
    mesh = Mesh(lower, upper, (mc["cells"],) * dim, tags)
    return Basis(mesh, mc["degree"])


def build_kernel(cfg: dict, dim: int) -> KernelSpec | None:
    kc = cfg["kernel"]
    if not kc["enabled"]:
        return None
    return KernelSpec(kc["gamma"], kc["strength"], kc["cutoff_radius"], dim)


def _field_load(lc: dict, prefix: str) -> FieldLoad | None:
    amp = lc[f"{prefix}_amplitude"]
    if not np.any(amp) and prefix not in ("theta_ext", "mu_ext"):
        return None
    tp = TimeProfile(lc[f"{prefix}_time"], lc[f"{prefix}_period"], lc[f"{prefix}_phase"])
    sp = SpatialProfile(lc[f"{prefix}_space"], lc[f"{prefix}_center"], lc[f"{prefix}_width"])
    return FieldLoad(amp, tp, sp)


def _wave_scalar(base: float, amp: float):
    if amp == 0:
        return base
    return lambda x: base + amp * np.prod(np.cos(np.pi * x), axis=1)


def _wave_vector(base: tuple, amp: float, dim: int):
    b = np.asarray(base[:dim], dtype=float)
    if amp == 0:
        return b
    if dim == 1:
        return lambda x: b + amp * np.cos(np.pi * x)
    return lambda x: b + amp * np.stack([np.cos(np.pi * x[:, 0]), np.sin(np.pi * x[:, 1])], axis=1)


def build_dynamic_problem(cfg: dict, dt: float | None = None, epsilon: float | None = None):
    """Dynamic problem from a resolved config (optional ``dt``/``epsilon`` overrides)."""
    from .dynamics import DynamicLoads, DynamicProblem, SolverSettings

    model = build_model(cfg)
    d = model.dim
    basis = build_basis(cfg, d)
    lc, ic, dc = cfg["loads"], cfg["initial"], cfg["dynamics"]
    loads = DynamicLoads(
        body_force=_field_load(lc, "body_force"),
        traction=_field_load(lc, "traction"),
        traction_facets=lc["traction_facets"],
        external_field=_field_load(lc, "field"),
        mu_ext=_field_load(lc, "mu_ext"),
        theta_ext=_field_load(lc, "theta_ext"),
        mass_transfer=lc["mass_transfer"],
        heat_transfer=lc["heat_transfer"],
        transfer_facets=lc["transfer_facets"],
    )
    settings = SolverSettings(dc["tol_newton"], dc["max_newton"], dc["retry_floor"])
    return DynamicProblem(
        model, basis, loads, build_kernel(cfg, d),
        epsilon=dc["epsilon"] if epsilon is None else epsilon,
        t_end=dc["t_end"], dt=dc["dt"] if dt is None else dt,
        v0=np.asarray(ic["v0"][:d]),
        m0=_wave_vector(ic["m0"], ic["m0_wave"], d),
        zeta0=_wave_scalar(ic["zeta0"], ic["zeta0_wave"]),
        theta0=_wave_scalar(ic["theta0"], ic["theta0_wave"]),
        settings=settings,
    )


def build_static_problem(cfg: dict):
    """Static problem and its ground-state initial guess."""
    from .magnetostatics import SpatialGrid
    from .statics import OptimizerSettings, StaticLoads, StaticProblem, ground_state

    model = build_model(cfg)
    d = model.dim
    basis = build_basis(cfg, d)
    lc, sc = cfg["loads"], cfg["statics"]
    nan_none = lambda v: None if np.isnan(v) else v  # noqa: E731
    loads = StaticLoads(
        body_force=_field_load(lc, "body_force"),
        traction=_field_load(lc, "traction"),
        traction_facets=lc["traction_facets"],
        external_field=_field_load(lc, "field"),
        zeta_total=nan_none(sc["zeta_total"]),
        entropy_total=nan_none(sc["entropy_total"]),
        dirichlet_matrix=sc["dirichlet_matrix"][: d * d],
        dirichlet_offset=sc["dirichlet_offset"][:d],
    )
    settings = OptimizerSettings(
        max_iter=sc["max_iter"], tol_grad=sc["tol_grad"], tol_con=sc["tol_con"], memory=sc["memory"],
        cn_rounds=sc["cn_rounds"], cn_samples=sc["cn_samples"], seed=cfg["run"]["seed"],
    )
    grid = None
    if sc["demag"]:
        mesh = basis.mesh
        grid = SpatialGrid.enclosing(mesh.lower, mesh.upper, (sc["grid_cells"],) * 2, sc["grid_margin"], sc["mu0"])
    problem = StaticProblem(model, basis, loads, build_kernel(cfg, d), grid, settings)
    return problem, ground_state(problem, sc["theta_ref"])


# ---------------------------------------------------------------------------
# artifact writing
# ---------------------------------------------------------------------------


class ArtifactWriter:
    """Atomic writes (temp file + rename) with sha256 bookkeeping."""

    def __init__(self, root: Path):
        self.root = root
        self.hashes: dict[str, str] = {}

    def write_bytes(self, name: str, data: bytes) -> Path:
        target = self.root / name
        target.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=target.parent, prefix=".tmp-")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, target)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        self.hashes[name] = hashlib.sha256(data).hexdigest()
        return target

    def write_json(self, name: str, obj) -> Path:
        return self.write_bytes(name, (json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n").encode())

    def write_csv(self, name: str, header: list[str], rows) -> Path:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_num(v) for v in row])
        return self.write_bytes(name, buf.getvalue().encode())

    def write_array(self, name: str, blocks: dict[str, np.ndarray], meta: dict) -> None:
        """Raw little-endian float64 blocks plus a JSON header."""
        layout, parts, offset = {}, [], 0
        for key, arr in blocks.items():
            a = np.ascontiguousarray(arr, dtype="<f8")
            layout[key] = {"offset": offset, "shape": list(a.shape)}
            parts.append(a.tobytes())
            offset += a.nbytes
        self.write_bytes(name + ".bin", b"".join(parts))
        self.write_json(name + ".json", {"dtype": "<f8", "blocks": layout, **meta})


def _num(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return int(v)
    return v


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if np.isfinite(f) else repr(f)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _trajectory_rows(problem, traj):
    from .dynamics import energy_audit, estimate_monitor, holonomic_residual

    reports = energy_audit(problem, traj)
    mon = estimate_monitor(traj, r=problem_monitor_r(problem))
    B = problem.basis.values_q
    header = ["step"] + list(reports[0].to_dict()) + [
        "holonomic_residual", "enthalpy_defect", "mass_flux", "theta_min", "J_min", "zeta_integral",
        "lap_zeta_l2", "lap_m_l2", "flux_mu_l2", "flux_theta_l2", "theta_l1", "grad_theta_lr",
    ]
    rows = []
    for k, (st, rep) in enumerate(zip(traj.states, reports)):
        rows.append([k, *rep.to_dict().values(),
                     holonomic_residual(problem, st), st.record.enthalpy_defect, st.record.mass_flux,
                     float((B @ st.theta).min()), float(mon["J_min"][k]), float(problem.basis.integrals @ st.zeta),
                     *(float(mon[key][k]) for key in ("lap_zeta_l2", "lap_m_l2", "flux_mu_l2", "flux_theta_l2",
                                                     "theta_l1", "grad_theta_lr"))])
    return header, rows, reports, mon


def problem_monitor_r(problem) -> float:
    return getattr(problem, "_monitor_r", 1.2)


def _snapshot_blocks(st) -> dict:
    return {k: np.asarray(getattr(st, k)) for k in ("chi", "v", "m", "zeta", "mu", "theta")}


def _eta_report(problem, st) -> dict:
    d = problem.dim
    gamma = problem.kernel.gamma if problem.kernel is not None else problem.model.gamma
    bound = determinant_bound(DiscreteField(problem.basis, np.asarray(st.chi)), gamma, problem.model.q_xi)
    return {"J_min": bound.J_min, "location": list(bound.location), "C_alpha": bound.C_alpha,
            "M_int": bound.M_int, "eta_star": bound.eta_star, "dim": d}


def cmd_simulate(cfg: dict, out: ArtifactWriter, validate_only: bool) -> dict:
    from .dynamics import nonneg_temperature_check, simulate

    problem = build_dynamic_problem(cfg)
    problem._monitor_r = cfg["dynamics"]["monitor_r"]
    if validate_only:
        return {"validated": True}
    stride = cfg["dynamics"]["snapshot_stride"]
    counter = [0]

    def snap(st):
        k = counter[0]
        if stride > 0 and k % stride == 0:
            out.write_array(f"snapshots/state_{k:06d}", _snapshot_blocks(st), {"t": st.t, "step": k})
        counter[0] += 1

    traj = simulate(problem, callback=snap)
    header, rows, reports, mon = _trajectory_rows(problem, traj)
    out.write_csv("steps.csv", header, rows)
    chk = nonneg_temperature_check(traj)
    summary = {
        "steps": len(traj.states) - 1,
        "t_end": traj.states[-1].t,
        "residual_alpha0_max": max(r.residual_alpha0 for r in reports),
        "residual_alpha1_max": max(r.residual_alpha1 for r in reports),
        "theta_min": chk.theta_min, "theta_min_location": chk.location, "theta_min_time": chk.time,
        "theta_nonnegative": chk.passed,
        "J_min": float(np.min(mon["J_min"])),
        "determinant_bound": _eta_report(problem, traj.states[-1]),
        "monitor_suprema": {k: float(v[-1]) for k, v in mon.items() if k.endswith("_sup")},
    }
    out.write_json("summary.json", summary)
    return summary


def cmd_audit(cfg: dict, out: ArtifactWriter, validate_only: bool) -> dict:
    from .dynamics import energy_audit, relative_residual, simulate

    base = build_dynamic_problem(cfg)
    if validate_only:
        return {"validated": True}
    levels = cfg["dynamics"]["audit_levels"]
    rows, res0, res1 = [], [], []
    for k in range(levels):
        dt = base.dt / 2**k
        p = build_dynamic_problem(cfg, dt=dt)
        reps = energy_audit(p, simulate(p))
        r0, r1 = relative_residual(reps, 0), relative_residual(reps, 1)
        o0 = np.log2(res0[-1] / r0) if res0 and r0 > 0 else float("nan")
        o1 = np.log2(res1[-1] / r1) if res1 and r1 > 0 else float("nan")
        res0.append(r0)
        res1.append(r1)
        rows.append([dt, r0, r1, o0, o1])
    out.write_csv("audit.csv", ["dt", "relative_residual_alpha0", "relative_residual_alpha1", "order_alpha0", "order_alpha1"], rows)
    summary = {"levels": [dict(zip(("dt", "rel0", "rel1", "order0", "order1"), r)) for r in rows]}
    out.write_json("audit.json", summary)
    return summary


def cmd_static_min(cfg: dict, out: ArtifactWriter, validate_only: bool) -> dict:
    from .statics import minimize, temperature_from_entropy

    problem, guess = build_static_problem(cfg)
    if validate_only:
        return {"validated": True}
    res = minimize(problem, guess)
    trace = [{k: getattr(t, k) for k in ("iteration", "energy", "grad_norm", "zeta_residual", "entropy_residual",
                                          "cn_gap", "J_min", "step")} for t in res.trace]
    out.write_json("trace.json", trace)
    st = res.state
    out.write_array("coefficients", {"chi": st.chi, "m": st.m, "zeta": st.zeta, "s": st.s}, {"status": res.status})
    b = problem.basis
    mesh = b.mesh
    n = cfg["statics"]["slice_points"]
    if b.dim == 2:
        xs = np.linspace(mesh.lower[0], mesh.upper[0], n)
        pts = np.stack([xs, np.full(n, 0.5 * (mesh.lower[1] + mesh.upper[1]))], axis=1)
    else:
        pts = np.linspace(mesh.lower[0], mesh.upper[0], n)[:, None]
    chi = evaluate(DiscreteField(b, st.chi), pts, 0)
    F = evaluate(DiscreteField(b, st.chi), pts, 1)
    m = evaluate(DiscreteField(b, st.m), pts, 0)
    z = evaluate(DiscreteField(b, st.zeta), pts, 0).ravel()
    s = evaluate(DiscreteField(b, st.s), pts, 0).ravel()
    th = temperature_from_entropy(problem.model, None, m, z, s)
    J = np.linalg.det(F)
    d = b.dim
    header = ["x"] + [f"chi{i + 1}" for i in range(d)] + [f"m{i + 1}" for i in range(d)] + ["zeta", "s", "theta", "J"]
    rows = [[pts[k, 0], *chi[k], *m[k], z[k], s[k], th[k], J[k]] for k in range(n)]
    out.write_csv("slice.csv", header, rows)
    summary = {
        "status": res.status, "converged": res.converged, "iterations": len(res.trace) - 1,
        "energy": res.report.total, "items": res.report.items, "multipliers": list(res.multipliers),
        "cn_gap": res.cn_gap, "J_min": res.report.J_min, "theta_min": res.report.theta_min,
        "determinant_bound": _eta_report(problem, st),
    }
    out.write_json("summary.json", summary)
    if not res.converged:
        raise SolverFailure(f"static minimization ended with status {res.status}")
    return summary


def _shear_map():
    A = np.array([[2.0, 0.5], [0.0, 1.0]])
    return (lambda x: (x @ A.T, np.broadcast_to(A, (len(x), 2, 2)))), Mesh.unit(2, 1)


def _identity_map():
    return (lambda x: (x.copy(), np.broadcast_to(np.eye(2), (len(x), 2, 2)))), Mesh.unit(2, 1)


def _double_cover_map(inner: float = 0.5):
    """Wraps ``(0,2) x (0,1)`` twice around an annulus of unit area with ``J = 1``."""

    def chi(x):
        r = np.sqrt(inner**2 + (1 - x[:, 1]) / np.pi)
        angle = 2 * np.pi * x[:, 0]
        c, s = np.cos(angle), np.sin(angle)
        F = np.empty((len(x), 2, 2))
        F[:, 0, 0], F[:, 1, 0] = -2 * np.pi * r * s, 2 * np.pi * r * c
        F[:, 0, 1], F[:, 1, 1] = -c / (2 * np.pi * r), -s / (2 * np.pi * r)
        return np.stack([r * c, r * s], 1), F

    return chi, Mesh((0.0, 0.0), (2.0, 1.0), (2, 2))


_GAP_MAPS = {"identity": _identity_map, "shear": _shear_map, "double_cover": _double_cover_map}


def cmd_magnetostatics(cfg: dict, out: ArtifactWriter, validate_only: bool) -> dict:
    from .magnetostatics import gap_report, uniform_disk_study

    mc = cfg["magnetostatics"]
    if mc["gap_map"] not in _GAP_MAPS:
        raise ValidationError(f"magnetostatics.gap_map must be one of {', '.join(_GAP_MAPS)}")
    if mc["gap_samples"] < 1:
        raise ValidationError("magnetostatics.gap_samples must be positive")
    if validate_only:
        return {"validated": True}
    r = uniform_disk_study(mc["radius"], mc["magnetization"], mc["cells"], mc["margin"], mc["mu0"], mc["supersample"])
    summary = {k: v for k, v in r._asdict().items() if not k.startswith("slice")}
    chi, mesh = _GAP_MAPS[mc["gap_map"]]()
    g = gap_report(chi, mesh, n_samples=mc["gap_samples"], seed=cfg["run"]["seed"])
    summary["gap"] = {"map": mc["gap_map"], "value": g.gap, "integral_J": g.integral_J,
                      "image_measure": g.image_measure, "degenerate": g.degenerate}
    out.write_csv("demag_slice.csv", ["x", "H1", "H2"], zip(r.slice_x, r.slice_field[:, 0], r.slice_field[:, 1]))
    out.write_json("magnetostatics.json", summary)
    return summary


def cmd_kernel_check(cfg: dict, out: ArtifactWriter, validate_only: bool) -> dict:
    model = build_model(cfg)
    d = model.dim
    kernel = build_kernel(cfg, d)
    if kernel is None:
        raise ValidationError("kernel-check needs [kernel] enabled = true")
    basis = build_basis(cfg, d)
    kc = cfg["kernel_check"]
    if validate_only:
        return {"validated": True}
    opts = dict(n_radial=kc["n_radial"], n_angular=kc["n_angular"], threads=cfg["run"]["threads"] or None)
    rng = np.random.default_rng(cfg["run"]["seed"])

    def field(x):
        x = np.atleast_2d(x)
        if d == 1:
            return np.sin(np.pi * x[:, 0])[:, None, None]
        g = np.empty((x.shape[0], d, d))
        g[:, 0, 0] = np.sin(np.pi * x[:, 0]) * x[:, 1]
        g[:, 0, 1] = x[:, 0] ** 2
        g[:, 1, 0] = np.cos(x[:, 1])
        g[:, 1, 1] = x[:, 0] * x[:, 1]
        return g

    mesh = basis.mesh
    base = gagliardo_energy(kernel, field, mesh, **opts)
    const = gagliardo_energy(kernel, lambda x: np.ones((np.atleast_2d(x).shape[0], d, d)), mesh, **opts)
    coarse = gagliardo_energy(kernel, field, mesh, n_radial=max(2, kc["n_radial"] // 2),
                              n_angular=max(2, kc["n_angular"] // 2), threads=opts["threads"])
    frame = []
    for _ in range(kc["rotations"] if d > 1 else 0):
        a = rng.uniform(0, 2 * np.pi)
        Q = np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])
        rot = gagliardo_energy(kernel, lambda x: np.einsum("ij,qjk->qik", Q, field(x)), mesh, **opts)
        frame.append(abs(rot - base) / abs(base))
    summary = {"energy": base, "constant_field_energy": const, "coarse_rule_rel_diff": abs(coarse - base) / abs(base),
               "frame_rel_diff": frame}
    out.write_json("kernel_check.json", summary)
    return summary


def cmd_check_model(cfg: dict, out: ArtifactWriter, validate_only: bool) -> dict:
    model = build_model(cfg)
    if validate_only:
        return {"validated": True}
    rep = check_assumptions(model)
    summary = rep.to_dict()
    out.write_json("assumptions.json", summary)
    if not rep.all_passed:
        raise ValidationError(f"model violates: {', '.join(rep.failed())}")
    return summary


COMMANDS = {
    "static-min": cmd_static_min,
    "simulate": cmd_simulate,
    "audit": cmd_audit,
    "kernel-check": cmd_kernel_check,
    "magnetostatics": cmd_magnetostatics,
    "check-model": cmd_check_model,
}


def run(subcommand: str, config_path, output_dir: str | None = None, threads: int | None = None,
        validate_only: bool = False) -> int:
    """Execute one subcommand; returns the process exit status."""
    out = None
    try:
        if subcommand not in COMMANDS:
            raise ValidationError(f"unknown subcommand {subcommand!r}")
        cfg = load_config(config_path)
        if threads is not None:
            if threads < 0:
                raise ValidationError("--threads must be >= 0")
            cfg["run"]["threads"] = threads
        if cfg["run"]["threads"] == 0:
            cfg["run"]["threads"] = os.cpu_count() or 1
        root = output_dir or os.environ.get(OUTPUT_ENV) or cfg["run"]["output_dir"]
        cfg["run"]["output_dir"] = str(root)
        out = ArtifactWriter(Path(root))
        summary = COMMANDS[subcommand](cfg, out, validate_only)
        if not validate_only:
            _manifest(out, subcommand, cfg, "ok")
        print(json.dumps(_jsonable({"status": "ok", "subcommand": subcommand, "output_dir": str(root),
                                    "summary": summary}), sort_keys=True, default=str)[:4000])
        return 0
    except ValidationError as exc:
        return _fail(out, subcommand, exc, 2)
    except SolverFailure as exc:
        return _fail(out, subcommand, exc, 3)
    except MagnetoelasticError as exc:
        return _fail(out, subcommand, exc, 3)


def _manifest(out: ArtifactWriter, subcommand: str, cfg: dict, status: str) -> None:
    hashes = dict(sorted(out.hashes.items()))
    out.write_json("manifest.json", {
        "schema_version": SCHEMA_VERSION, "package_version": __version__, "subcommand": subcommand,
        "status": status, "config": config_to_text(cfg), "artifacts": hashes,
    })


def _fail(out, subcommand, exc, code) -> int:
    record = {"status": "error", "exit_code": code, "subcommand": subcommand, "error": type(exc).__name__,
              "message": str(exc)}
    print(json.dumps(record, sort_keys=True), file=sys.stderr)
    if out is not None and out.hashes:
        try:
            out.write_json("error.json", record)
        except OSError:
            pass
    return code


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="magnetoelastic", description=__doc__.splitlines()[0])
    parser.add_argument("--schema", action="store_true", help="print the config schema and exit")
    sub = parser.add_subparsers(dest="subcommand")
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("config", help="INI config or manifest.json (bundled names are looked up too)")
        sp.add_argument("--validate-only", action="store_true", help="parse and validate, write nothing")
        sp.add_argument("--threads", type=int, default=None, help="worker threads (default: config or all cores)")
        sp.add_argument("--output-dir", default=None, help=f"artifact directory (overrides ${OUTPUT_ENV} and config)")
    args = parser.parse_args(argv)
    if args.schema:
        print(schema_text())
        return 0
    if not args.subcommand:
        parser.print_help()
        return 2
    return run(args.subcommand, args.config, args.output_dir, args.threads, args.validate_only)


if __name__ == "__main__":
    sys.exit(main())
