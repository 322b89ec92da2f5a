# app/main.py
"""
Command-line front end.

    python -m app.main certify --family '{"family":"monic_additive","d":2}' --c -1

Exit codes: 0 success, 2 usage error, 1 computational failure (error JSON on stderr).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from pydantic import BaseModel, ValidationError

from app.core.config import settings
from app.core.errors import BranchLoss, NearParabolic, ToolkitError
from app.core.logging import setup_logging
from app.schemas import results
from app.schemas.family import CubicSpec, parse_family
from app.services import bones, kneading, lifting, orbits, output, transfer

logger = logging.getLogger(__name__)

SUBCOMMANDS = ("solve", "orbit", "certify", "spectrum", "scan", "lift", "bones", "entropy")


class UsageError(Exception):
    pass


# =========================
# Parser
# =========================
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="transverse", description="Transversality toolkit for one-dimensional dynamics.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--family", required=True, help="FamilySpec as JSON")
        p.add_argument("--c", type=float, nargs="+", help="parameter (two values (a, b) for the cubic)")
        p.add_argument("--q", type=int)
        p.add_argument("--bracket", type=float, nargs=2)
        p.add_argument("--range", type=float, nargs=2, dest="c_range")
        p.add_argument("--grid", type=int)
        p.add_argument("--n", type=int)
        p.add_argument("--kmax", type=int)
        p.add_argument("--theta", type=float)
        p.add_argument("--ell", type=float)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--jobs", type=int, default=None)
        p.add_argument("--out")
        p.add_argument("--format", choices=("json", "csv", "svg"), default="json")
        p.add_argument("--log-level", default=None)
        _extra_flags(name, p)
    return parser


def _extra_flags(name: str, p: argparse.ArgumentParser) -> None:
    if name == "spectrum":
        p.add_argument("--labels", action="store_true", help="label-indexed operator A_J")
    if name == "scan":
        p.add_argument("--laps", type=int, default=0, help="lap table length per grid point")
        p.add_argument("--transient", type=int, default=500)
        p.add_argument("--keep", type=int, default=100)
        p.add_argument("--width", type=int, default=640)
        p.add_argument("--height", type=int, default=480)
    if name == "lift":
        p.add_argument("--radius", type=float, default=0.2)
        p.add_argument("--samples", type=int, help="Schwarz-lemma sampling at --theta instead of lifting")
    if name in ("bones", "entropy"):
        p.add_argument("--point", type=float, nargs=2, help="seed (a, b) on the bone")
        p.add_argument("--step", type=float)


def _param(args):
    if not args.c:
        raise UsageError("--c is required")
    return args.c[0] if len(args.c) == 1 else tuple(args.c)


def _need(args, name: str, flag: str | None = None) -> None:
    if getattr(args, name) is None:
        raise UsageError(f"--{flag or name} is required")


# =========================
# Emitters
# =========================
def _json_text(payload) -> str:
    if isinstance(payload, BaseModel):
        return payload.model_dump_json(indent=2) + "\n"
    # batches print as a JSON array
    return json.dumps([item.model_dump(mode="json") for item in payload], indent=2) + "\n"


def _emit(args, payload) -> None:
    text = _json_text(payload)
    if args.out:
        path = Path(args.out)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _require_out(args) -> Path:
    if not args.out:
        raise UsageError(f"--out is required for --format {args.format}")
    return Path(args.out)


# =========================
# Subcommands
# =========================
def _solved(spec, q: int, c: float) -> results.SolveOut:
    relations = orbits.detect_relations(orbits.critical_orbit(spec, c))
    return results.solve_out(q, c, orbits.superstable_residual(spec, q, c), relations)


def cmd_solve(spec, args) -> None:
    _need(args, "q")
    if args.bracket:
        c = orbits.solve_superstable(spec, args.q, args.bracket)
        _emit(args, _solved(spec, args.q, c))
    elif args.c_range:
        found = orbits.enumerate_superstable(spec, args.c_range, args.q, grid=args.grid or 64)
        _emit(args, results.EnumerateOut(parameters=[_solved(spec, q, c) for q, c in found]))
    else:
        raise UsageError("solve needs --bracket or --range")


def cmd_orbit(spec, args) -> None:
    orbit = orbits.critical_orbit(spec, _param(args), max_iter=args.kmax)
    _emit(args, results.orbit_out(orbit, orbits.detect_relations(orbit)))


def cmd_certify(spec, args) -> None:
    if args.c_range:
        _need(args, "q")
        found = orbits.enumerate_superstable(spec, args.c_range, args.q, grid=args.grid or 64)
        batch = [results.certificate_out(transfer.certify(spec, c)) for _, c in found]
        _emit(args, batch)
        return
    _emit(args, results.certificate_out(transfer.certify(spec, _param(args))))


def cmd_spectrum(spec, args) -> None:
    orbit = orbits.critical_orbit(spec, _param(args))
    relations = orbits.detect_relations(orbit)
    matrix = transfer.assemble_AJ(orbit, relations) if args.labels else transfer.assemble_A(orbit, relations)
    eig = transfer.spectrum(matrix)
    _emit(args, results.spectrum_out(matrix, eig, transfer.spectral_radius(eig), transfer.det_poly(matrix)))


def cmd_scan(spec, args) -> None:
    _need(args, "c_range", "range")
    if args.format == "svg":
        output.emit_bifurcation_svg(spec, args.c_range, args.transient, args.keep, args.width, args.height, _require_out(args))
        return
    report = kneading.monotonicity_scan(
        spec, args.c_range[0], args.c_range[1], args.grid or 2000, args.n or 60, n_laps=args.laps, jobs=args.jobs
    )
    if args.format == "csv":
        output.emit_scan_csv(report, _require_out(args))
    else:
        _emit(args, results.scan_out(report))


def cmd_lift(spec, args) -> None:
    if args.samples is not None:
        _need(args, "theta")
        report = lifting.schwarz_sampling(args.theta, args.samples, seed=args.seed)
        _emit(args, results.schwarz_out(args.theta, report))
        return
    orbit = orbits.critical_orbit(spec, _param(args))
    relations = orbits.detect_relations(orbit)
    motion = lifting.make_motion(orbit.gP, lifting.affine_velocity(orbit), args.radius)
    k_max = 20 if args.kmax is None else args.kmax
    radius = transfer.spectral_radius(transfer.spectrum(transfer.assemble_A(orbit, relations)))
    try:
        diag = lifting.iterate_lifts(spec, orbit, relations, motion, k_max)
    except BranchLoss as exc:
        if exc.diagnostics is None:
            raise
        # partial diagnostics still go out; the exit code reports the failure
        _emit(args, results.lift_out(exc.diagnostics, radius, failed_at=exc.k))
        raise
    if args.format == "csv":
        output.emit_motion_csv(diag.final, _require_out(args))
        return
    sectors = None
    if args.theta is not None and args.ell is not None:
        sectors = lifting.lift_sequence_sectors(spec, orbit, relations, motion, k_max, args.ell, args.theta)
    _emit(args, results.lift_out(diag, radius, sectors=sectors))


def _trace(args, n_steps: int) -> list[bones.BoneCurve]:
    _need(args, "q")
    if args.point:
        return [bones.trace_component(args.q, args.point, args.step, n_steps)]
    curves: list[bones.BoneCurve] = []
    step = args.step or settings.BONE_STEP
    for seed in bones.find_bone_seeds(args.q):
        if any(np.min(np.linalg.norm(cv.points - np.asarray(seed), axis=1)) < 2.0 * step for cv in curves):
            continue
        curves.append(bones.trace_component(args.q, seed, args.step, n_steps))
    logger.info("bones q=%d: %d traced components", args.q, len(curves))
    return curves


def _transversality(curve) -> dict[int, float | None]:
    out: dict[int, float | None] = {}
    for ev in curve.crossings():
        try:
            out[ev.index] = bones.directional_transversality(None, curve, ev)
        except NearParabolic:
            out[ev.index] = None
    return out


def _curve_files(path: Path, count: int) -> list[Path]:
    if count == 1:
        return [path]
    return [path.with_name(f"{path.stem}_{k}{path.suffix}") for k in range(count)]


def cmd_bones(spec, args) -> None:
    curves = _trace(args, args.n or 200)
    if args.format == "svg":
        output.emit_curve_svg(curves, _require_out(args))
    elif args.format == "csv":
        for cv, path in zip(curves, _curve_files(_require_out(args), len(curves))):
            output.emit_curve_csv(cv, path)
    else:
        _emit(args, [results.bone_out(cv, _transversality(cv), bones.ordering_changes(None, cv)) for cv in curves])


def cmd_entropy(spec, args) -> None:
    if args.q is None:
        w = _param(args)
        table = kneading.lap_numbers(spec, w, args.n or 16)
        _emit(args, results.laps_out(w, table))
        return
    if not isinstance(spec, CubicSpec):
        raise UsageError("entropy along a bone needs the cubic family")
    n = args.n or 12
    curves = _trace(args, 200)
    reports = [bones.entropy_along(None, cv, n) for cv in curves]
    if args.format == "csv":
        for cv, rep, path in zip(curves, reports, _curve_files(_require_out(args), len(curves))):
            output.emit_curve_csv(bones.with_entropy(cv, rep), path)
        return
    _emit(args, [results.entropy_along_out(cv.q, rep) for cv, rep in zip(curves, reports)])


HANDLERS: dict[str, Callable] = {
    "solve": cmd_solve,
    "orbit": cmd_orbit,
    "certify": cmd_certify,
    "spectrum": cmd_spectrum,
    "scan": cmd_scan,
    "lift": cmd_lift,
    "bones": cmd_bones,
    "entropy": cmd_entropy,
}


# =========================
# Entry point
# =========================
def _fail(payload: dict) -> int:
    sys.stderr.write(json.dumps(payload, sort_keys=True) + "\n")
    return 1


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    setup_logging(args.log_level)
    if args.seed is not None:
        settings.SEED = args.seed

    try:
        spec = parse_family(args.family)
    except (ValidationError, ValueError) as exc:
        parser.print_usage(sys.stderr)
        sys.stderr.write(f"invalid --family: {exc}\n")
        return 2
    if args.command == "bones" and not isinstance(spec, CubicSpec):
        parser.print_usage(sys.stderr)
        sys.stderr.write("bones needs the cubic family\n")
        return 2

    try:
        HANDLERS[args.command](spec, args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        sys.stderr.write(f"{exc}\n")
        return 2
    except ToolkitError as exc:
        logger.debug("%s failed: %s", args.command, exc.message)
        return _fail(exc.to_dict())
    except OSError as exc:
        return _fail({"error": "io_error", "message": str(exc)})
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
