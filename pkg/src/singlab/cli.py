"""Command-line interface: ``singlab <subcommand> [options]``.

Exit codes: 0 when every check passes, 1 when a check fails, 2 for
configuration errors, 3 for runtime failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

EXIT_OK, EXIT_CHECKS, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3
_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")

log = logging.getLogger("singlab")


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.replace(",", " ").split()]


def _load_json(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        from singlab.errors import ConfigError

        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def _emit(args, name: str, payload: dict | str) -> None:
    text = payload if isinstance(payload, str) else json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / name).write_text(text)
        log.info("wrote %s", out / name)
    else:
        sys.stdout.write(text)


def _load_set(path: str):
    from singlab.fractal_sets import BoxUnion

    return BoxUnion.from_dict(json.loads(Path(path).read_text()))


def _domain(args, A=None):
    from singlab.distance import DomainBox
    from singlab.rhs import default_domain

    if args.domain:
        lo, hi = _floats(args.domain[0]), _floats(args.domain[1])
        return DomainBox(tuple(lo), tuple(hi))
    return default_domain(A)


# ---------------------------------------------------------------------------
# subcommands


def cmd_cantor(args) -> int:
    from singlab.fractal_sets import cantor_for_dimension, cantor_grill, set_document

    C = cantor_for_dimension(args.dim, args.generation)
    if args.ambient > 1 or args.thick > 0:
        doc = cantor_grill(C, args.ambient, args.thick).to_dict(
            kind="cantor_grill", ratios=list(C.schedule.ratios), generation=C.generation)
    else:
        doc = set_document(C)
    _emit(args, "set.json", doc)
    return EXIT_OK


def cmd_dimest(args) -> int:
    from singlab.fractal_sets import box_counting_dimension

    A = _load_set(args.set)
    rng = tuple(args.scale_range) if args.scale_range else None
    est = box_counting_dimension(A, rng, args.scales_per_decade)
    doc = est.to_dict()
    passed = True
    if args.expect is not None:
        passed = abs(est.slope - args.expect) <= args.tolerance
        doc["expected"], doc["passed"] = args.expect, passed
    _emit(args, "dimension.json", doc)
    return EXIT_OK if passed else EXIT_CHECKS


def cmd_hp_check(args) -> int:
    from singlab.rhs import hp_check

    A = _load_set(args.set)
    rep = hp_check(A, args.gamma, args.p, _domain(args, A), budget=args.budget, seed=args.seed)
    _emit(args, "hp_check.json", rep.to_dict())
    if args.out:
        Path(args.out, "hp_check.csv").write_text(",".join(rep.CSV_FIELDS) + "\n" + rep.csv_row())
    return EXIT_OK


def cmd_rhs_build(args) -> int:
    from singlab.distance import DomainBox
    from singlab.errors import ConfigError
    from singlab.rhs import build_rhs

    cfg = _load_json(args.config)
    sets_paths = args.sets or cfg.get("sets")
    gammas = args.gammas or cfg.get("gammas")
    if not sets_paths or not gammas:
        raise ConfigError("rhs-build needs --sets and --gammas (or 'sets' and 'gammas' in the config)")
    sets = [_load_set(p) for p in sets_paths]
    if args.domain:
        dom = _domain(args)
    elif "domain" in cfg:
        dom = DomainBox.from_dict(cfg["domain"])
    else:
        raise ConfigError("rhs-build needs a domain")
    F = build_rhs(sets, [float(g) for g in gammas], dom, args.truncation or cfg.get("truncation"),
                  budget=args.budget, seed=args.seed)
    _emit(args, "rhs.json", F.to_dict())
    return EXIT_OK


def cmd_solve(args) -> int:
    import numpy as np

    from singlab.poisson import Grid, SolveConfig, solve_poisson
    from singlab.rhs import SingularRhs

    F = SingularRhs.from_dict(json.loads(Path(args.rhs).read_text()))
    grid = Grid.uniform(F.domain, args.nodes)
    u, rep = solve_poisson(F, grid, SolveConfig(tol=args.tol, quadrature=args.quadrature))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        u.write(out / "u.bin")
        if grid.dim <= 2:
            u.write_csv(out / "u.csv")
    _emit(args, "solve.json", {"report": rep.to_dict(timing=False), "min": float(np.min(u.values)),
                               "max": float(np.max(u.values))})
    return EXIT_OK if rep.residual <= rep.tolerance else EXIT_CHECKS


def cmd_fit_exponent(args) -> int:
    from singlab.poisson import GridField, fit_singularity_order

    u = GridField.read(args.field)
    A = _load_set(args.set) if args.set else None
    fit = fit_singularity_order(u, _floats(args.point), A, tuple(args.window))
    _emit(args, "fit.json", fit.to_dict())
    return EXIT_OK


def cmd_sdmap(args) -> int:
    from singlab.rhs import SingularRhs
    from singlab.singdim import flag_rhs_cells, lattice_points, sd_map, usc_check

    F = SingularRhs.from_dict(json.loads(Path(args.rhs).read_text()))
    spacing = _floats(args.spacing)
    if len(spacing) == 1:
        spacing = spacing * F.dim
    cells = flag_rhs_cells(F, args.cell)
    m = sd_map(lattice_points(F.domain.lo, F.domain.hi, spacing), cells, args.radii, spacing)
    viol = usc_check(m)
    doc = {"map": m.to_dict(), "usc_violations": [v.to_dict() for v in viol]}
    _emit(args, "sdmap.json", doc)
    if args.out:
        Path(args.out, "sdmap.csv").write_text(m.csv_text())
    return EXIT_OK if not viol else EXIT_CHECKS


def cmd_scenario(args) -> int:
    from singlab.errors import ConfigError
    from singlab.scenarios import ScenarioConfig, run_scenario

    doc = _load_json(args.config)
    if doc.get("name", args.name) != args.name:
        raise ConfigError(f"config names scenario {doc['name']!r} but {args.name!r} was requested")
    doc["name"] = args.name
    if args.seed is not None:
        doc["seed"] = args.seed
    cfg = ScenarioConfig.from_dict(doc)
    report = run_scenario(cfg, args.out)
    if not args.out:
        sys.stdout.write(report.to_json())
    for c in report.checks:
        log.info("%s %s", "PASS" if c["passed"] else "FAIL", c["id"])
    return EXIT_OK if report.all_passed else EXIT_CHECKS


# ---------------------------------------------------------------------------
# parser


def _common_flags(suppress: bool) -> argparse.ArgumentParser:
    # subcommand copies suppress their defaults so flags given before the subcommand survive
    d = {"default": argparse.SUPPRESS} if suppress else {}
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file", **d)
    common.add_argument("--out", help="output directory (default: stdout)", **d)
    common.add_argument("--seed", type=int, help="random seed (u64)", **d)
    common.add_argument("--threads", type=int, help="worker threads for numerical kernels", **d)
    common.add_argument("--verbose", "-v", action="store_true", **d)
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_flags(suppress=True)
    p = argparse.ArgumentParser(prog="singlab", description=__doc__.splitlines()[0], parents=[_common_flags(False)])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("cantor", parents=[common], help="build a generalized Cantor set or grill")
    s.add_argument("--dim", type=float, required=True)
    s.add_argument("--generation", type=int, default=12)
    s.add_argument("--ambient", type=int, default=1, help="ambient dimension of the grill")
    s.add_argument("--thick", type=int, default=0, help="number of full [0,1] factors")
    s.set_defaults(func=cmd_cantor)

    s = sub.add_parser("dimest", parents=[common], help="box-counting dimension of a set file")
    s.add_argument("--set", required=True)
    s.add_argument("--scale-range", type=float, nargs=2)
    s.add_argument("--scales-per-decade", type=int, default=10)
    s.add_argument("--expect", type=float)
    s.add_argument("--tolerance", type=float, default=0.05)
    s.set_defaults(func=cmd_dimest)

    s = sub.add_parser("hp-check", parents=[common], help="integrability verdict for d(., A)^-gamma in L^p")
    s.add_argument("--set", required=True)
    s.add_argument("--gamma", type=float, required=True)
    s.add_argument("--p", type=float, default=1.0)
    s.add_argument("--domain", nargs=2, metavar=("LO", "HI"), help="comma-separated corners")
    s.add_argument("--budget", type=int, default=4000)
    s.set_defaults(func=cmd_hp_check)

    s = sub.add_parser("rhs-build", parents=[common], help="assemble a right-hand side")
    s.add_argument("--sets", nargs="+")
    s.add_argument("--gammas", type=float, nargs="+")
    s.add_argument("--domain", nargs=2, metavar=("LO", "HI"))
    s.add_argument("--truncation", type=int)
    s.add_argument("--budget", type=int, default=4000)
    s.set_defaults(func=cmd_rhs_build)

    s = sub.add_parser("solve", parents=[common], help="grid solve of -Lap u = F")
    s.add_argument("--rhs", required=True)
    s.add_argument("--nodes", type=int, default=17)
    s.add_argument("--tol", type=float, default=1e-10)
    s.add_argument("--quadrature", choices=("node", "cell"), default="node")
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("fit-exponent", parents=[common], help="singularity order of a grid field")
    s.add_argument("--field", required=True)
    s.add_argument("--point", required=True, help="comma-separated coordinates")
    s.add_argument("--set")
    s.add_argument("--window", type=float, nargs=2, required=True)
    s.set_defaults(func=cmd_fit_exponent)

    s = sub.add_parser("sdmap", parents=[common], help="singular-dimension map of a right-hand side")
    s.add_argument("--rhs", required=True)
    s.add_argument("--cell", type=float, default=2.0 ** -14)
    s.add_argument("--spacing", required=True, help="lattice spacing, one value or one per axis")
    s.add_argument("--radii", type=float, nargs="+", required=True)
    s.set_defaults(func=cmd_sdmap)

    s = sub.add_parser("scenario", parents=[common], help="run a named scenario")
    s.add_argument("name", choices=("stein", "dense", "contrast", "pointwise", "radial", "hp-sweep"))
    s.set_defaults(func=cmd_scenario)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.threads:
        for var in _THREAD_VARS:
            os.environ[var] = str(args.threads)
    if getattr(args, "seed", None) is None and args.command != "scenario":
        args.seed = 0

    from singlab.errors import ConfigError, DomainError, SinglabError

    try:
        return args.func(args)
    except (ConfigError, DomainError) as exc:
        print(f"singlab: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SinglabError, OSError, ValueError, RuntimeError) as exc:
        print(f"singlab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
