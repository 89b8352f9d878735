"""Configuration parsing, experiment orchestration and report emission.

Config files use flat `[section]` / `key = value` lines (see README for the
full schema).  Spatial fields are picked from a small catalog -- constant,
linear, gaussian bump, per-node CSV -- instead of arbitrary expressions.
Exit codes: 0 ok, 1 configuration error, 2 solver or check failure.
"""

import argparse
import csv
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .analysis import (SolverNotConverged, fixed_control_sweep,
                       optimal_control_sweep, section5_checks, sweep_flags)
from .assembly import assemble, compute_constants
from .control import (ControlPair, contraction_constant, convexity_gap,
                      cost_J, gradient_J, h_inner, hq_inner, hq_norm,
                      q_inner, solve_cg, solve_fixed_point)
from .adjoint import solve_adjoint
from .linalg import EigenError, SolverError
from .mesh import SIDES, TimeGrid, build_rect_mesh
from .state import ProblemData, Stepper, solve_state, solve_state_homogeneous

OPTIMIZERS = ("cg", "fixed_point", "both")


class ConfigError(Exception):
    pass


# -- config file parsing -------------------------------------------------------

def _parse_scalar(text):
    text = text.strip()
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "'\"":
        return text[1:-1]
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


def _parse_value(text):
    text = text.strip()
    if text.startswith("[") and text.endswith("]"):
        inner = text[1:-1].strip()
        return [] if not inner else [_parse_scalar(p) for p in inner.split(",")]
    return _parse_scalar(text)


def parse_config_text(text, origin="<config>") -> dict:
    """Parse the sectioned key/value format into nested dicts."""
    sections = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            if not name:
                raise ConfigError(f"{origin}:{lineno}: empty section name")
            current = sections.setdefault(name, {})
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{lineno}: expected 'key = value', got {raw!r}")
        if current is None:
            raise ConfigError(f"{origin}:{lineno}: key outside of any [section]")
        key, value = line.split("=", 1)
        current[key.strip()] = _parse_value(value)
    return sections


# -- analytic field catalog ----------------------------------------------------

FIELD_CATALOG = ("zero", "constant", "linear", "bump", "csv")


def _field_values(spec, points, origin):
    """Evaluate a catalog field spec at an array of (x, y) points."""
    spec = str(spec).strip()
    name, _, args = spec.partition(":")
    name = name.strip()
    x, y = points[:, 0], points[:, 1]
    try:
        if name == "zero":
            return np.zeros(len(points))
        if name == "constant":
            return float(args) * np.ones(len(points))
        if name == "linear":
            c0, cx, cy = (float(a) for a in args.split(","))
            return c0 + cx * x + cy * y
        if name == "bump":
            cx, cy, width, amp = (float(a) for a in args.split(","))
            return amp * np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2.0 * width**2))
        if name == "csv":
            path = Path(args.strip())
            if not path.exists():
                raise ConfigError(f"{origin}: field file not found: {path}")
            values = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=1)
            if values.ndim != 1 or len(values) != len(points):
                raise ConfigError(
                    f"{origin}: {path} must hold {len(points)} values, "
                    f"got shape {values.shape}"
                )
            return np.asarray(values, dtype=float)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{origin}: bad field spec {spec!r}: {exc}") from None
    raise ConfigError(
        f"{origin}: unknown field {name!r}, expected one of {FIELD_CATALOG}"
    )


# -- run configuration -----------------------------------------------------------

@dataclass
class RunConfig:
    nx: int
    ny: int
    gamma1: tuple
    T: float
    n_steps: int
    M1: float
    M2: float
    alpha: float | None
    alphas: list
    b_spec: str
    v_b_spec: str
    z_d_spec: str
    tol: float
    max_iter: int
    optimizer: str
    variant: str
    out_dir: Path
    formats: tuple
    raw: dict = field(default_factory=dict)


def _require(section, key, sections, origin):
    if section not in sections:
        raise ConfigError(f"{origin}: missing [{section}] section")
    if key not in sections[section]:
        raise ConfigError(f"{origin}: missing key {key!r} in [{section}]")
    return sections[section][key]


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    sections = parse_config_text(path.read_text(), origin=str(path))
    origin = str(path)

    mesh_sec = sections.get("mesh", {})
    nx = int(_require("mesh", "nx", sections, origin))
    ny = int(_require("mesh", "ny", sections, origin))
    gamma1_val = mesh_sec.get("gamma1", "left")
    gamma1 = tuple(
        s.strip() for s in (
            gamma1_val if isinstance(gamma1_val, list) else str(gamma1_val).split(",")
        ) if str(s).strip()
    )
    for side in gamma1:
        if side not in SIDES:
            raise ConfigError(f"{origin}: unknown gamma1 side {side!r}")

    T = float(_require("time", "T", sections, origin))
    n_steps = int(_require("time", "n_steps", sections, origin))

    prob = sections.get("problem", {})
    M1 = float(_require("problem", "M1", sections, origin))
    M2 = float(_require("problem", "M2", sections, origin))
    if M1 <= 0 or M2 <= 0:
        raise ConfigError(f"{origin}: M1 and M2 must be positive")
    alpha = prob.get("alpha")
    alpha = None if alpha is None else float(alpha)
    alphas_val = prob.get("alphas", [])
    alphas = [float(a) for a in (
        alphas_val if isinstance(alphas_val, list) else str(alphas_val).split(",")
    )] if alphas_val else []

    solver = sections.get("solver", {})
    tol = float(solver.get("tol", 1e-8))
    if tol <= 0:
        raise ConfigError(f"{origin}: solver tol must be positive, got {tol}")
    max_iter = int(solver.get("max_iter", 500))
    optimizer = str(solver.get("optimizer", "cg"))
    if optimizer not in OPTIMIZERS:
        raise ConfigError(
            f"{origin}: optimizer must be one of {OPTIMIZERS}, got {optimizer!r}"
        )
    variant = str(solver.get("variant", "P"))
    if variant not in ("P", "Palpha"):
        raise ConfigError(f"{origin}: variant must be 'P' or 'Palpha', got {variant!r}")
    if variant == "Palpha" and (alpha is None or alpha <= 0):
        raise ConfigError(f"{origin}: variant 'Palpha' needs problem.alpha > 0")

    out = sections.get("output", {})
    out_dir = Path(out.get("directory", "out"))
    formats_val = out.get("formats", "csv,json")
    formats = tuple(
        s.strip() for s in (
            formats_val if isinstance(formats_val, list) else str(formats_val).split(",")
        ) if str(s).strip()
    )
    for fmt in formats:
        if fmt not in ("csv", "json"):
            raise ConfigError(f"{origin}: unknown output format {fmt!r}")

    return RunConfig(
        nx=nx, ny=ny, gamma1=gamma1, T=T, n_steps=n_steps,
        M1=M1, M2=M2, alpha=alpha, alphas=alphas,
        b_spec=str(prob.get("b", "zero")),
        v_b_spec=str(prob.get("v_b", "zero")),
        z_d_spec=str(prob.get("z_d", "zero")),
        tol=tol, max_iter=max_iter, optimizer=optimizer, variant=variant,
        out_dir=out_dir, formats=formats, raw=sections,
    )


def build_problem(config: RunConfig):
    """Construct (ops, data) from a parsed configuration."""
    try:
        mesh = build_rect_mesh(config.nx, config.ny, config.gamma1)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    ops = assemble(mesh)
    grid = TimeGrid(config.T, config.n_steps)
    origin = "problem section"
    b = _field_values(config.b_spec, mesh.nodes[ops.dirichlet_nodes], origin)
    v_b = _field_values(config.v_b_spec, mesh.nodes, origin)
    z_node = _field_values(config.z_d_spec, mesh.nodes, origin)
    z_d = np.tile(z_node, (grid.n_steps, 1))
    data = ProblemData(b=b, v_b=v_b, z_d=z_d, M1=config.M1, M2=config.M2,
                       grid=grid, alpha=config.alpha)
    try:
        data.validate(ops)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return ops, data


# -- report writers --------------------------------------------------------------

def _fmt(x) -> str:
    return f"{float(x):.17g}"


def write_json(path, payload):
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([c if isinstance(c, (int, str)) else _fmt(c) for c in row])


def trajectory_rows(traj):
    rows = []
    for step in range(traj.slices.shape[0]):
        for node in range(traj.slices.shape[1]):
            rows.append((step, node, traj.slices[step, node]))
    return rows


def control_rows(series, node_ids=None):
    rows = []
    for step in range(series.shape[0]):
        for j in range(series.shape[1]):
            node = j if node_ids is None else int(node_ids[j])
            rows.append((step + 1, node, series[step, j]))
    return rows


def summarize_solve(payload) -> str:
    lines = []
    for name in sorted(payload["runs"]):
        run = payload["runs"][name]
        lines.append(
            f"{name}: converged={run['converged']} iterations={run['iterations']} "
            f"cost={run['cost']:.12e} grad_norm={run['grad_norm']:.12e}"
        )
    return "\n".join(lines)


def summarize_sweep(payload) -> str:
    lines = []
    for rec in payload["report"]["records"]:
        parts = [f"alpha={rec['alpha']:g}",
                 f"state_gap={rec['state_gap']:.12e}",
                 f"adjoint_gap={rec['adjoint_gap']:.12e}"]
        if "control_gap" in rec:
            parts.append(f"control_gap={rec['control_gap']:.12e}")
        parts.append(f"boundary_residual={rec['boundary_residual']:.12e}")
        lines.append(" ".join(parts))
    for name in sorted(payload["flags"]):
        lines.append(f"check {name}: {'pass' if payload['flags'][name] else 'FAIL'}")
    for name in sorted(payload.get("fixed_control_flags", {})):
        ok = payload["fixed_control_flags"][name]
        lines.append(f"check fixed_control.{name}: {'pass' if ok else 'FAIL'}")
    return "\n".join(lines)


# -- subcommands -----------------------------------------------------------------

def run_solve(config: RunConfig, quiet=False) -> int:
    ops, data = build_problem(config)
    constants = compute_constants(ops)
    if config.variant == "Palpha" and (data.alpha is None or data.alpha <= 0):
        raise ConfigError("variant 'Palpha' needs problem.alpha > 0")
    out = config.out_dir
    out.mkdir(parents=True, exist_ok=True)
    runs = {}
    reports = {}
    optimizers = ("cg", "fixed_point") if config.optimizer == "both" \
        else (config.optimizer,)
    stepper = Stepper(ops, data.grid, config.variant, data.alpha)
    for name in optimizers:
        if name == "cg":
            rep = solve_cg(data, ops, config.variant, config.tol,
                           max_iter=config.max_iter, stepper=stepper)
        else:
            rep = solve_fixed_point(data, ops, config.variant, config.tol,
                                    max_iter=config.max_iter, stepper=stepper)
        reports[name] = rep
        runs[name] = rep.summary_dict()

    payload = {
        "command": "solve",
        "variant": config.variant,
        "constants": constants.to_dict(),
        "runs": runs,
    }
    if "json" in config.formats:
        write_json(out / "solve_report.json", payload)
    if "csv" in config.formats:
        for name, rep in reports.items():
            write_csv(out / f"history_{name}.csv",
                      ("iteration", "residual_norm"), rep.history)
            u = solve_state(data, rep.control, ops, config.variant, stepper)
            p = solve_adjoint(data, u, ops, config.variant, stepper)
            write_csv(out / f"state_{name}.csv", ("step", "node", "value"),
                      trajectory_rows(u))
            write_csv(out / f"adjoint_{name}.csv", ("step", "node", "value"),
                      trajectory_rows(p))
            write_csv(out / f"control_g_{name}.csv", ("step", "node", "value"),
                      control_rows(rep.control.g))
            write_csv(out / f"control_q_{name}.csv", ("step", "node", "value"),
                      control_rows(rep.control.q, ops.gamma2_nodes))
    if not quiet:
        print(summarize_solve(payload))
    return 0 if all(r["converged"] for r in runs.values()) else 2


def run_sweep(config: RunConfig, quiet=False) -> int:
    ops, data = build_problem(config)
    if not config.alphas:
        raise ConfigError("sweep needs problem.alphas (a list of coefficients > 1)")
    if any(a <= 1.0 for a in config.alphas):
        raise ConfigError(
            f"sweep coefficients must all exceed 1, got {config.alphas}"
        )
    out = config.out_dir
    out.mkdir(parents=True, exist_ok=True)
    zero = ControlPair.zeros_like(ops, data.grid)
    fixed = fixed_control_sweep(data, zero, config.alphas, ops)
    fixed_flags = sweep_flags(fixed)
    try:
        report = optimal_control_sweep(data, config.alphas, ops, config.tol)
    except SolverNotConverged as exc:
        if not quiet:
            print(f"sweep aborted: {exc}")
        return 2
    flags = sweep_flags(report)
    payload = {
        "command": "sweep",
        "report": report.to_dict(),
        "flags": flags,
        "fixed_control_report": fixed.to_dict(),
        "fixed_control_flags": fixed_flags,
    }
    if "json" in config.formats:
        write_json(out / "sweep_report.json", payload)
    if "csv" in config.formats:
        header = ("alpha", "state_gap", "adjoint_gap", "control_gap",
                  "boundary_residual", "cost_alpha")
        rows = [
            (rec.alpha, rec.state_gap, rec.adjoint_gap, rec.control_gap,
             rec.boundary_residual, rec.cost_alpha)
            for rec in report.records
        ]
        write_csv(out / "sweep.csv", header, rows)
        fixed_rows = [
            (rec.alpha, rec.state_gap, rec.adjoint_gap, rec.boundary_residual)
            for rec in fixed.records
        ]
        write_csv(out / "sweep_fixed.csv",
                  ("alpha", "state_gap", "adjoint_gap", "boundary_residual"),
                  fixed_rows)
    if not quiet:
        print(summarize_sweep(payload))
    return 0 if all(flags.values()) and all(fixed_flags.values()) else 2


def run_checks(config: RunConfig, quiet=False) -> int:
    ops, data = build_problem(config)
    if data.alpha is None or data.alpha <= 1.0:
        raise ConfigError("checks need problem.alpha > 1")
    grid = data.grid
    rng = np.random.default_rng(7)
    stepper_p = Stepper(ops, grid, "P")
    stepper_a = Stepper(ops, grid, "Palpha", data.alpha)
    checks = []

    def add(name, measured, bound, passed):
        checks.append({
            "name": name,
            "measured": float(measured),
            "bound": float(bound),
            "passed": bool(passed),
        })

    def random_ctrl():
        return ControlPair(
            rng.standard_normal((grid.n_steps, ops.n_nodes)),
            rng.standard_normal((grid.n_steps, len(ops.gamma2_nodes))),
        )

    # adjoint identity, both variants
    for variant, stepper in (("P", stepper_p), ("Palpha", stepper_a)):
        base = random_ctrl()
        u = solve_state(data, base, ops, variant, stepper)
        p = solve_adjoint(data, u, ops, variant, stepper)
        worst = 0.0
        for _ in range(5):
            d = random_ctrl()
            cu = solve_state_homogeneous(d, stepper)
            lhs = h_inner(cu.slices[1:], u.slices[1:] - data.z_d, ops, grid)
            rhs = h_inner(d.g, p.slices[:-1], ops, grid) \
                - q_inner(d.q, ops.trace2(p.slices[:-1]), ops, grid)
            worst = max(worst, abs(lhs - rhs) / (1.0 + abs(lhs)))
        add(f"adjoint_identity_{variant}", worst, 1e-10, worst <= 1e-10)

    # gradient vs central differences
    worst = 0.0
    for _ in range(5):
        ctrl = random_ctrl()
        d = random_ctrl()
        scale = hq_norm(d, ops, grid)
        if scale == 0:
            continue
        d = (1.0 / scale) * d
        grad = gradient_J(data, ctrl, ops, config.variant, stepper_p
                          if config.variant == "P" else stepper_a)
        directional = hq_inner(grad, d, ops, grid)
        h = 1e-5
        stepper = stepper_p if config.variant == "P" else stepper_a
        jp = cost_J(data, ctrl + h * d, ops, config.variant, stepper)
        jm = cost_J(data, ctrl - h * d, ops, config.variant, stepper)
        fd = (jp - jm) / (2.0 * h)
        worst = max(worst, abs(directional - fd) / max(abs(fd), 1e-300))
    add("gradient_finite_difference", worst, 1e-6, worst <= 1e-6)

    # convexity identity
    worst = 0.0
    stepper = stepper_p if config.variant == "P" else stepper_a
    for _ in range(3):
        c1, c2 = random_ctrl(), random_ctrl()
        u1 = solve_state(data, c1, ops, config.variant, stepper)
        u2 = solve_state(data, c2, ops, config.variant, stepper)
        for t in (0.25, 0.5, 0.75):
            gap = convexity_gap(data, c1, c2, t, ops, config.variant, stepper)
            dmis = u2.slices[1:] - u1.slices[1:]
            expect = 0.5 * t * (1.0 - t) * (
                h_inner(dmis, dmis, ops, grid)
                + data.M1 * h_inner(c2.g - c1.g, c2.g - c1.g, ops, grid)
                + data.M2 * q_inner(c2.q - c1.q, c2.q - c1.q, ops, grid)
            )
            worst = max(worst, abs(gap - expect) / max(abs(expect), 1e-300))
    add("convexity_identity", worst, 1e-10, worst <= 1e-10)

    for entry in section5_checks(data, ops, config.tol, n_pairs=10):
        add(entry["name"], entry["lhs"], entry["threshold"], entry["passed"])

    if config.optimizer in ("fixed_point", "both"):
        # divergence is the documented outcome when the bound is not a
        # contraction, so it only fails this check when C0 < 1
        c0 = contraction_constant(compute_constants(ops), data.M1, data.M2,
                                  config.variant, data.alpha)
        stepper = stepper_p if config.variant == "P" else stepper_a
        fp = solve_fixed_point(data, ops, config.variant, config.tol,
                               max_iter=config.max_iter, stepper=stepper)
        if fp.converged:
            cg_rep = solve_cg(data, ops, config.variant, config.tol,
                              max_iter=config.max_iter, stepper=stepper)
            gap = hq_norm(fp.control - cg_rep.control, ops, grid)
            add("fixed_point_vs_cg", gap, 10.0 * config.tol,
                gap <= 10.0 * config.tol)
        else:
            add("fixed_point_divergence_consistent", c0, 1.0, c0 >= 1.0)

    payload = {"command": "check", "checks": checks}
    out = config.out_dir
    out.mkdir(parents=True, exist_ok=True)
    if "json" in config.formats:
        write_json(out / "checks.json", payload)
    if not quiet:
        for c in checks:
            status = "pass" if c["passed"] else "FAIL"
            print(f"check {c['name']}: {status} "
                  f"(measured={c['measured']:.6e}, bound={c['bound']:.6e})")
    return 0 if all(c["passed"] for c in checks) else 2


def run_constants(config: RunConfig, quiet=False) -> int:
    ops, _ = build_problem(config)
    constants = compute_constants(ops)
    payload = {"command": "constants", "constants": constants.to_dict()}
    if config.out_dir is not None:
        config.out_dir.mkdir(parents=True, exist_ok=True)
        if "json" in config.formats:
            write_json(config.out_dir / "constants.json", payload)
    if not quiet:
        print(json.dumps(payload, indent=2, sort_keys=True))
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="heatctrl",
        description="Distributed-boundary optimal control of the heat equation",
    )
    parser.add_argument("command", choices=("solve", "sweep", "check", "constants"))
    parser.add_argument("--config", required=True, help="path to the config file")
    parser.add_argument("--out", default=None, help="override the output directory")
    parser.add_argument("--quiet", action="store_true", help="suppress stdout")
    args = parser.parse_args(argv)

    try:
        config = load_config(args.config)
        if args.out is not None:
            config.out_dir = Path(args.out)
        handler = {
            "solve": run_solve,
            "sweep": run_sweep,
            "check": run_checks,
            "constants": run_constants,
        }[args.command]
        return handler(config, quiet=args.quiet)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except (SolverError, EigenError, SolverNotConverged) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
