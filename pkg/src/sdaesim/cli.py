"""Command-line interface: ``sdaesim {simulate,converge,check,heat2d}``.

Exit codes: 0 success, 1 model or integration failure, 2 usage error.
Output files go to ``--output-dir``, defaulting to ``$SDAESIM_OUTPUT_DIR``
or the current directory.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import convergence, models
from .brownian import generate
from .errors import InvalidSpec, SdaeError
from .integrators import integrate
from .problem import ValidationConfig, validate

log = logging.getLogger("sdaesim")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2
OUTPUT_ENV = "SDAESIM_OUTPUT_DIR"


class UsageError(Exception):
    pass


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _power_of_two(n: int) -> bool:
    return n >= 1 and n & (n - 1) == 0


def _add_model_args(sp):
    sp.add_argument("--model", default="example3d", help="example3d, heat2d, ou or broken")
    sp.add_argument("--m", type=int, default=20, help="heat2d grid cells per side")
    sp.add_argument("--diffusion", type=float, default=100.0, help="heat2d diffusion")
    sp.add_argument("--noise-amp", type=float, default=1e-4, help="heat2d noise amplitude")
    sp.add_argument("--porosity-csv", type=Path, help="heat2d porosity grid file")
    sp.add_argument("--horizon", type=float, default=1.0)


def _add_output_arg(sp):
    sp.add_argument("--output-dir", type=Path,
                    default=Path(os.environ.get(OUTPUT_ENV, ".")))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sdaesim", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate", help="integrate one path and write trajectory.csv")
    _add_model_args(sp)
    sp.add_argument("--n", type=int, default=256, help="number of steps (power of two)")
    sp.add_argument("--n-fine", type=int, help="Brownian grid size, a multiple of --n")
    sp.add_argument("--seed", type=int, default=1)
    sp.add_argument("--scheme", choices=["primary", "dual"], default="primary")
    _add_output_arg(sp)

    sp = sub.add_parser("converge", help="pathwise convergence study")
    _add_model_args(sp)
    sp.add_argument("--seeds", type=_int_list, default=[1, 2, 3])
    sp.add_argument("--n-ref", type=int, default=2**14)
    sp.add_argument("--resolutions", type=_int_list,
                    default=[2**k for k in range(5, 11)])
    sp.add_argument("--parallel", action="store_true")
    sp.add_argument("--workers", type=int)
    _add_output_arg(sp)

    sp = sub.add_parser("check", help="validate structural assumptions")
    _add_model_args(sp)
    sp.add_argument("--n", type=int, default=64, help="steps used for the iteration-matrix check")
    sp.add_argument("--rank-tol", type=float, default=ValidationConfig.rank_tol)
    sp.add_argument("--index1-tol", type=float, default=ValidationConfig.index1_tol)
    sp.add_argument("--jacobian-tol", type=float, default=ValidationConfig.jacobian_tol)
    sp.add_argument("--iteration-tol", type=float, default=ValidationConfig.iteration_tol)
    sp.add_argument("--a13-tol", type=float, default=ValidationConfig.a13_tol)

    sp = sub.add_parser("heat2d", help="porous-medium demo, with and without noise")
    sp.add_argument("--m", type=int, default=20)
    sp.add_argument("--n", type=int, default=64)
    sp.add_argument("--seed", type=int, default=1)
    sp.add_argument("--diffusion", type=float, default=100.0)
    sp.add_argument("--noise-amp", type=float, default=1e-4)
    sp.add_argument("--porosity-csv", type=Path)
    sp.add_argument("--horizon", type=float, default=1.0)
    _add_output_arg(sp)
    return parser


def _heat_spec(args) -> models.Heat2dSpec:
    porosity = models.read_porosity_csv(args.porosity_csv) if args.porosity_csv else None
    return models.Heat2dSpec(m=args.m, diffusion=args.diffusion, noise_amp=args.noise_amp,
                             porosity=porosity, horizon=args.horizon)


def resolve_model(args):
    if args.model not in models.MODELS:
        raise UsageError(f"--model: unknown model {args.model!r}; "
                         f"choose from {', '.join(sorted(models.MODELS))}")
    try:
        if args.model == "heat2d":
            return models.build_heat2d(_heat_spec(args))
        if args.model in ("example3d", "ou"):
            return models.get_model(args.model, horizon=args.horizon)
        return models.get_model(args.model)
    except (InvalidSpec, OSError, ValueError) as exc:
        raise UsageError(f"invalid model parameters: {exc}")


def cmd_simulate(args) -> int:
    if not _power_of_two(args.n):
        raise UsageError(f"--n must be a power of two, got {args.n}")
    n_fine = args.n_fine or args.n
    if not _power_of_two(n_fine) or n_fine % args.n:
        raise UsageError(f"--n-fine must be a power of two divisible by --n, got {n_fine}")
    p = resolve_model(args)
    path = generate(args.seed, p.horizon, n_fine, p.d1)
    traj = integrate(p, args.n, path, args.scheme)
    args.output_dir.mkdir(parents=True, exist_ok=True)
    out = args.output_dir / "trajectory.csv"
    traj.to_csv(out)
    print(f"wrote {out} ({args.n + 1} rows, scheme={args.scheme})")
    return EXIT_OK


def cmd_converge(args) -> int:
    if not args.seeds:
        raise UsageError("--seeds must name at least one seed")
    if not _power_of_two(args.n_ref):
        raise UsageError(f"--n-ref must be a power of two, got {args.n_ref}")
    bad = [n for n in args.resolutions if n < 1 or args.n_ref % n]
    if not args.resolutions or bad:
        raise UsageError(f"--resolutions must all divide --n-ref={args.n_ref}: {bad}")
    p = resolve_model(args)
    study = convergence.run_study(p, args.seeds, args.n_ref, args.resolutions,
                                  parallel=args.parallel, max_workers=args.workers)
    files = convergence.write_study_csvs(study, args.output_dir)
    for r in study.reports:
        if not r.ok:
            print(f"seed {r.seed}: FAILED {r.message}")
        elif r.rate_defined:
            print(f"seed {r.seed}: rate {r.rate:.4f}")
        else:
            print(f"seed {r.seed}: rate undefined")
    print(f"mean rate {study.mean_rate:.4f} (std {study.std_rate:.4f}, "
          f"{study.n_failed} failed of {len(study.reports)})")
    print(f"wrote {', '.join(str(f) for f in files.values())}")
    return EXIT_OK if study.successful else EXIT_FAILURE


def cmd_check(args) -> int:
    p = resolve_model(args)
    if args.n < 1:
        raise UsageError("--n must be positive")
    config = ValidationConfig(n_steps=args.n, rank_tol=args.rank_tol,
                              index1_tol=args.index1_tol, jacobian_tol=args.jacobian_tol,
                              iteration_tol=args.iteration_tol, a13_tol=args.a13_tol)
    report = validate(p, config)
    print(f"model {p.name}: {p.description}" if p.description else f"model {p.name}")
    print(report)
    return EXIT_OK if report.ok else EXIT_FAILURE


def cmd_heat2d(args) -> int:
    if not _power_of_two(args.n):
        raise UsageError(f"--n must be a power of two, got {args.n}")
    try:
        spec = _heat_spec(args)
        quiet = models.Heat2dSpec(m=args.m, diffusion=args.diffusion, noise_amp=0.0,
                                  porosity=spec.porosity, horizon=args.horizon)
    except (InvalidSpec, OSError, ValueError) as exc:
        raise UsageError(f"invalid heat2d parameters: {exc}")
    out = args.output_dir
    out.mkdir(parents=True, exist_ok=True)
    grids = {}
    for label, s in (("noise", spec), ("nonoise", quiet)):
        p = models.build_heat2d(s)
        path = generate(args.seed, p.horizon, args.n, p.d1)
        traj = integrate(p, args.n, path)
        grids[label] = models.grid_values(traj.states[-1], args.m)
        models.write_grid_csv(grids[label], out / f"heat2d_{label}.csv")
    models.write_porosity_csv(spec.porosity, out / "porosity.csv")
    diff = float(np.max(np.abs(grids["noise"] - grids["nonoise"])))
    print(f"wrote porosity.csv, heat2d_noise.csv, heat2d_nonoise.csv to {out}")
    print(f"max |noise - nonoise| at T: {diff:.3e}")
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "converge": cmd_converge,
            "check": cmd_check, "heat2d": cmd_heat2d}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"{parser.prog} {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SdaeError as exc:
        step = f" step={exc.step}" if exc.step is not None else ""
        print(f"error: {type(exc).__name__}{step}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
