"""Command-line driver: single Darcy solves with conservation reports,
full simulations, and convergence studies."""
import argparse
import configparser
import csv
import io
import os
import sys
from dataclasses import dataclass, fields

import numpy as np

from .coupling import (TimeGrid, project_saturation_to_elements, time_march)
from .darcy import CoefficientField, assemble, solve_pressure, stiffness_quad_degree
from .diagnostics import ConvergenceStudy, l2_saturation_error, \
    l2_saturation_error_discrete
from .errors import (CflError, ConfigError, ConservationGateError,
                     NonConvergenceError, UnknownProblemError)
from .mesh import DIRICHLET, NEUMANN, build_dof_map, build_dual_mesh, \
    build_structured_mesh, write_vtk
from .postprocess import cast_flux_field, cv_source, lce, postprocess, \
    raw_fluxes
from .problems import registry

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_GATE = 4
EXIT_CFL = 5


@dataclass
class RunConfig:
    example: str = "ex1-1"
    n: int = 32
    order: int = 1
    scheme: str = "upwind"
    nct: int = 50
    nft: int = 100
    iters: int = 1
    tfinal: float = -1.0            # <= 0: use the registry final time
    out: str = "."
    cfl: bool = False
    gate_lce: bool = True
    limiter_variant: str = "average"
    snapshots: int = 0              # VTK snapshot cadence (0 = off)
    levels: str = ""                # comma list for studies
    ref_n: int = 0                  # discrete-reference resolution (0 = auto)
    vtk: bool = False

    def validate(self):
        if self.n < 1:
            raise ConfigError(f"n must be >= 1, got {self.n}")
        if self.order not in (1, 2):
            raise ConfigError(f"order must be 1 or 2, got {self.order}")
        if self.scheme not in ("upwind", "limited"):
            raise ConfigError(f"unknown scheme {self.scheme!r}")
        if self.limiter_variant not in ("average", "minabs", "minmod"):
            raise ConfigError(
                f"unknown limiter variant {self.limiter_variant!r}")
        if min(self.nct, self.nft, self.iters) < 1:
            raise ConfigError("nct, nft and iters must be >= 1")
        try:
            registry(self.example)
        except UnknownProblemError as exc:
            raise ConfigError(str(exc)) from None
        return self


_BOOL_FIELDS = {"cfl", "gate_lce", "vtk"}


def load_config(path):
    """Flat key=value (INI-style) config; a [run] section is implied."""
    text = open(path).read()
    if not text.lstrip().startswith("["):
        text = "[run]\n" + text
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from None
    values = {}
    for section in parser.sections():
        values.update(parser[section])
    known = {f.name: f.type for f in fields(RunConfig)}
    cfg = RunConfig()
    for key, raw in values.items():
        key = key.replace("-", "_")
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        if key in _BOOL_FIELDS:
            setattr(cfg, key, raw.strip().lower() in ("1", "true", "yes", "on"))
        else:
            try:
                setattr(cfg, key, known[key](raw))
            except ValueError:
                raise ConfigError(f"bad value for {key!r}: {raw!r}") from None
    return cfg


def _apply_overrides(cfg, args):
    for f in fields(RunConfig):
        val = getattr(args, f.name, None)
        if val is not None:
            setattr(cfg, f.name, val)
    return cfg


def build_parser():
    parser = argparse.ArgumentParser(
        prog="cgflux",
        description="Locally conservative CGFEM flow and transport solver")
    parser.add_argument("--config", help="INI-style config file")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--example", help="problem name (ex1-1 ... ex2-3)")
        p.add_argument("--n", type=int, help="mesh resolution (n x n cells)")
        p.add_argument("--order", type=int, choices=(1, 2))
        p.add_argument("--out", help="output directory")
        p.add_argument("--vtk", action="store_const", const=True,
                       help="also write VTK fields")

    p = sub.add_parser("darcy", help="pressure solve + conservation report")
    add_common(p)

    p = sub.add_parser("simulate", help="time-march a full problem")
    add_common(p)
    p.add_argument("--scheme", choices=("upwind", "limited"))
    p.add_argument("--nct", type=int, help="coarse step count")
    p.add_argument("--nft", type=int, help="fine steps per coarse step")
    p.add_argument("--iters", type=int, help="inner iterations per coarse step")
    p.add_argument("--tfinal", type=float, help="override final time")
    p.add_argument("--cfl", action="store_const", const=True,
                   help="CFL-derived fine stepping")
    p.add_argument("--gate-lce", dest="gate_lce", action="store_const",
                   const=True, help="enforce the conservation gate (default)")
    p.add_argument("--no-gate-lce", dest="gate_lce", action="store_const",
                   const=False, help="skip the conservation gate")
    p.add_argument("--limiter-variant", dest="limiter_variant",
                   choices=("average", "minabs", "minmod"),
                   help="limited-scheme reconstruction variant")
    p.add_argument("--snapshots", type=int, help="snapshot cadence")

    p = sub.add_parser("study", help="convergence study over mesh levels")
    add_common(p)
    p.add_argument("--scheme", choices=("upwind", "limited"))
    p.add_argument("--nct", type=int)
    p.add_argument("--nft", type=int)
    p.add_argument("--iters", type=int)
    p.add_argument("--tfinal", type=float)
    p.add_argument("--cfl", action="store_const", const=True)
    p.add_argument("--levels", help="comma-separated mesh resolutions")
    p.add_argument("--ref-n", dest="ref_n", type=int,
                   help="discrete reference resolution")
    return parser


# ---------------------------------------------------------------------------
# pipeline helpers


def _discretize(cfg, n=None, order=None):
    mesh = build_structured_mesh(n or cfg.n)
    dofmap = build_dof_map(mesh, order or cfg.order)
    dual = build_dual_mesh(mesh, dofmap)
    return mesh, dofmap, dual


def _dof_class(kind):
    return {0: "interior", DIRICHLET: "dirichlet", NEUMANN: "neumann"}[kind]


def _write_csv(path, header, rows):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    with open(path, "w", newline="") as f:
        f.write(buf.getvalue())


def cmd_darcy(cfg):
    problem = registry(cfg.example)
    mesh, dofmap, dual = _discretize(cfg)
    K = CoefficientField(kappa=problem.kappa)
    lce_post = None
    for dtype, tol in ((np.float64, 1e-13), (np.longdouble, 1e-16)):
        system = assemble(mesh, dofmap, K, q=problem.q, g_D=problem.g_D,
                          g_N=problem.g_N,
                          quad_degree=stiffness_quad_degree(cfg.order),
                          dtype=dtype)
        pressure = solve_pressure(system, tol=tol)
        flux = postprocess(mesh, dofmap, dual, K, pressure, q=problem.q,
                           g_N=problem.g_N, quad_degree=system.quad_degree)
        flux = cast_flux_field(dofmap, dual, flux)
        q_cv = cv_source(mesh, dofmap, dual, problem.q)
        lce_post = lce(flux, q_cv)
        if np.abs(lce_post[dofmap.interior]).max() <= 1e-12:
            break
    pressure.coeffs = pressure.coeffs.astype(np.float64)
    raw = raw_fluxes(mesh, dofmap, dual, K, pressure)
    lce_raw = lce(raw, q_cv)

    rows = [(z, f"{x:.17g}", f"{y:.17g}", _dof_class(k),
             f"{r:.17g}", f"{p:.17g}")
            for z, ((x, y), k, r, p) in enumerate(zip(
                dofmap.dof_coords, dofmap.kind, lce_raw, lce_post))]
    path = os.path.join(cfg.out, f"lce_{cfg.example}_n{cfg.n}_k{cfg.order}.csv")
    _write_csv(path, ("dof", "x", "y", "class", "lce_raw", "lce_post"), rows)

    interior = dofmap.interior
    print(f"{cfg.example} n={cfg.n} k={cfg.order}: "
          f"cg_iters={pressure.cg_iterations} "
          f"max|lce_raw|={np.abs(lce_raw[interior]).max():.3e} "
          f"max|lce_post|={np.abs(lce_post[interior]).max():.3e}")
    print(f"wrote {path}")
    if cfg.vtk:
        vtk_path = os.path.join(cfg.out,
                                f"darcy_{cfg.example}_n{cfg.n}_k{cfg.order}.vtk")
        write_vtk(vtk_path, mesh,
                  point_data={"pressure": pressure.coeffs},
                  cell_data=None)
        print(f"wrote {vtk_path}")
    return EXIT_OK


def cmd_simulate(cfg):
    problem = registry(cfg.example)
    t_final = cfg.tfinal if cfg.tfinal > 0 else problem.t_final
    mesh, dofmap, dual = _discretize(cfg)
    grid = TimeGrid(t_final=t_final, n_coarse=cfg.nct, n_fine=cfg.nft,
                    n_iter=cfg.iters)

    snapshots_dir = os.path.join(cfg.out, f"snapshots_{cfg.example}")

    def snapshot_cb(step, pressure, sat):
        os.makedirs(snapshots_dir, exist_ok=True)
        s_elem = project_saturation_to_elements(sat, dual, dofmap)
        write_vtk(os.path.join(snapshots_dir, f"step_{step:05d}.vtk"), mesh,
                  cell_data={"saturation": s_elem})

    result = time_march(problem, grid, mesh, dofmap, dual, scheme=cfg.scheme,
                        limiter_variant=cfg.limiter_variant,
                        skip_gate=not cfg.gate_lce, cfl_mode=cfg.cfl,
                        snapshot_every=cfg.snapshots or None,
                        snapshot_callback=snapshot_cb if cfg.vtk else None)

    rows = [(r.step, f"{r.time:.17g}", f"{r.mass:.17g}", f"{r.s_min:.17g}",
             f"{r.s_max:.17g}", f"{r.max_lce:.17g}", r.cg_iterations)
            for r in result.records]
    path = os.path.join(
        cfg.out,
        f"run_{cfg.example}_n{cfg.n}_k{cfg.order}_{cfg.scheme}.csv")
    _write_csv(path, ("step", "time", "mass", "s_min", "s_max", "max_lce",
                      "cg_iterations"), rows)
    last = result.records[-1]
    print(f"{cfg.example} n={cfg.n} k={cfg.order} {cfg.scheme}: "
          f"T={last.time:.6g} mass={last.mass:.6g} "
          f"S in [{last.s_min:.3e}, {1 - last.s_max:.3e} below 1]")
    print(f"wrote {path}")
    return EXIT_OK


def _run_level(problem, cfg, n, order, t_final):
    mesh, dofmap, dual = _discretize(cfg, n=n, order=order)
    grid = TimeGrid(t_final=t_final, n_coarse=cfg.nct, n_fine=cfg.nft,
                    n_iter=cfg.iters)
    result = time_march(problem, grid, mesh, dofmap, dual, scheme=cfg.scheme,
                        limiter_variant=cfg.limiter_variant,
                        skip_gate=not cfg.gate_lce, cfl_mode=cfg.cfl)
    return mesh, dofmap, dual, result


def cmd_study(cfg):
    problem = registry(cfg.example)
    t_final = cfg.tfinal if cfg.tfinal > 0 else problem.t_final
    if not cfg.levels:
        raise ConfigError("study requires --levels (e.g. --levels 8,16,32)")
    try:
        levels = [int(tok) for tok in cfg.levels.split(",") if tok.strip()]
    except ValueError:
        raise ConfigError(f"bad --levels list {cfg.levels!r}") from None
    if any(n < 2 for n in levels) or len(levels) < 2:
        raise ConfigError("need at least two levels, each >= 2")

    reference = None
    if problem.analytic_saturation is None:
        ref_n = cfg.ref_n or 2 * max(levels)
        print(f"building discrete reference at n={ref_n} (k=2, limited)...")
        ref_cfg = RunConfig(**{**cfg.__dict__, "scheme": "limited"})
        reference = _run_level(problem, ref_cfg, ref_n, 2, t_final)

    study = ConvergenceStudy(label=f"{cfg.example}-k{cfg.order}-{cfg.scheme}")
    rows = []
    for n in levels:
        mesh, dofmap, dual, result = _run_level(problem, cfg, n, cfg.order,
                                                t_final)
        if problem.analytic_saturation is not None:
            err = l2_saturation_error(
                result.saturation,
                lambda x: problem.analytic_saturation(x, t_final),
                mesh, dofmap, dual)
        else:
            rmesh, rdofmap, rdual, rresult = reference
            err = l2_saturation_error_discrete(
                result.saturation, mesh, dofmap,
                rresult.saturation, rmesh, rdofmap, rdual)
        study.add(mesh.h, err)
        rows.append((n, dofmap.n_dofs, f"{mesh.h:.17g}", f"{err:.17g}"))
        print(f"  n={n:4d} N_dof={dofmap.n_dofs:7d} error={err:.6e}")

    order = study.order
    rows.append(("order", "", "", f"{order:.17g}"))
    path = os.path.join(
        cfg.out,
        f"study_{cfg.example}_k{cfg.order}_{cfg.scheme}.csv")
    _write_csv(path, ("n", "n_dof", "h", "l2_error"), rows)
    print(f"fitted order {order:.3f}; wrote {path}")
    return EXIT_OK


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        cfg = _apply_overrides(cfg, args).validate()
        handler = {"darcy": cmd_darcy, "simulate": cmd_simulate,
                   "study": cmd_study}[args.command]
        return handler(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonConvergenceError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ConservationGateError as exc:
        print(f"conservation gate failure: {exc}", file=sys.stderr)
        return EXIT_GATE
    except CflError as exc:
        print(f"CFL rejection: {exc}", file=sys.stderr)
        return EXIT_CFL


if __name__ == "__main__":
    sys.exit(main())
