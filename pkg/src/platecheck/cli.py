"""Command-line surface binding the modules into reproducible runs.

Exit codes: 0 = run completed (verdicts are report data, not exit
codes), 2 = invalid input, 3 = internal invariant violation.

Environment: ``PLATECHECK_THREADS`` caps the BLAS/LAPACK worker count
(0 or unset = automatic); ``PLATECHECK_SEED`` overrides the seed from
flags and config files.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .degree import (
    RadialBump,
    degree_boundary,
    degree_integral,
    degree_jacobian,
)
from .elasticity import rigidity_fit, scaling_check
from .errors import EmptyRegionError
from .errors import (
    BoundaryProximityError,
    InvalidArgumentError,
    PlatecheckError,
)
from .formats import (
    emit_report,
    parse_config,
    read_map,
    read_pixelset,
    write_map,
)
from .geometry import PiecewiseAffineMap
from .interpenetration import (
    ExtensionSpec,
    check_simple_interpenetration,
    noninvertibility_volume,
)
from .measure import premeasure
from .pathology import MSParams, crossing_scenario, ms_element, ms_limit
from .truncation import lipschitz_truncate

__all__ = ["RunConfig", "main", "run"]


@dataclass
class RunConfig:
    """Resolved parameters of one CLI invocation.

    Every numeric tolerance consumed by the run is echoed into the
    emitted report for provenance; the seed is always set (default 0).
    """

    subcommand: str
    inputs: dict = field(default_factory=dict)
    hs: tuple = ()
    beta: float | None = None
    epsilon: float | None = None
    tau: float | None = None
    delta: float | None = None
    samples: int = 256
    seed: int = 0
    out: str | None = None
    report_format: str = "structured-text"

    def __post_init__(self):
        env_seed = os.environ.get("PLATECHECK_SEED")
        if env_seed is not None:
            self.seed = int(env_seed)

    def tolerances(self) -> dict:
        out = {}
        for key in ("beta", "epsilon", "tau", "delta"):
            value = getattr(self, key)
            if value is not None:
                out[key] = value
        return out


def _apply_threads() -> None:
    raw = os.environ.get("PLATECHECK_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        raise InvalidArgumentError(
            f"PLATECHECK_THREADS must be an integer, got '{raw}'")
    if n > 0:
        try:
            import threadpoolctl
            threadpoolctl.threadpool_limits(n)
        except ImportError:
            for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                        "MKL_NUM_THREADS"):
                os.environ[var] = str(n)


def _parse_point(text: str) -> np.ndarray:
    try:
        return np.array([float(t) for t in text.split(",")])
    except ValueError:
        raise InvalidArgumentError(f"cannot parse point '{text}'")


def _parse_h(text: str) -> float:
    if "/" in text:
        num, _, den = text.partition("/")
        return float(num) / float(den)
    return float(text)


def _run_section(cfg: RunConfig) -> dict:
    return {"subcommand": cfg.subcommand, "seed": cfg.seed,
            "tool_version": __version__}


def _finish(cfg: RunConfig, report: dict) -> int:
    tols = cfg.tolerances()
    if tols:
        report.setdefault("tolerances", {}).update(tols)
    if cfg.out:
        emit_report(report, cfg.out, format=cfg.report_format)
    else:
        for name, body in report.items():
            if name == "rows":
                for i, row in enumerate(body):
                    for key, value in row.items():
                        print(f"row{i}.{key} = {value}")
            else:
                for key, value in body.items():
                    print(f"{name}.{key} = {value}")
    return 0


# -- subcommands -----------------------------------------------------------


def _cmd_degree(args) -> int:
    cfg = RunConfig("degree", seed=args.seed, out=args.out,
                    report_format=args.format)
    f = read_map(args.map)
    if not isinstance(f, PiecewiseAffineMap):
        raise InvalidArgumentError(f"{args.map} has no values block")
    y = _parse_point(args.point)
    if args.method == "jacobian":
        res = degree_jacobian(f, y, tolerance=args.tolerance)
        body = {"value": res.value, "method": res.method,
                "regular": res.regular, "margin": res.margin}
    elif args.method == "boundary":
        res = degree_boundary(f, y, tolerance=args.tolerance)
        body = {"value": res.value, "method": res.method,
                "regular": res.regular, "margin": res.margin}
    else:
        radius = args.bump_radius or 0.25 * f.image_mesh_size()
        estimate, error = degree_integral(f, RadialBump(y, radius))
        body = {"value": int(round(estimate)), "method": "integral",
                "estimate": estimate, "quadrature_error": error}
    print(f"degree {body['value']}")
    report = {"run": _run_section(cfg), "degree": body}
    if args.tolerance is not None:
        report["tolerances"] = {"degree_tolerance": args.tolerance}
    return _finish(cfg, report)


def _cmd_detect(args) -> int:
    cfg = RunConfig("detect", seed=args.seed, out=args.out,
                    samples=args.samples, report_format=args.format)
    u1 = read_map(args.u1)
    u2 = read_map(args.u2)
    if not (isinstance(u1, PiecewiseAffineMap)
            and isinstance(u2, PiecewiseAffineMap)):
        raise InvalidArgumentError("detect needs map files with values")
    spec = ExtensionSpec(thickness=args.thickness, mode=args.mode)
    rep = check_simple_interpenetration(
        u1, u2, spec, n_samples=cfg.samples, tolerance=args.tolerance,
        seed=cfg.seed)
    print(f"verdict {rep.verdict}")
    report = {
        "run": _run_section(cfg),
        "detect": {
            "verdict": rep.verdict,
            "margin_self": rep.margins[0],
            "margin_other": rep.margins[1],
            "exclusion_measure": rep.e_measure[0],
            "uses_k0": rep.uses_k0,
        },
        "tolerances": {"degree_tolerance": rep.tolerance,
                       "thickness": args.thickness},
        "rows": [
            {"degree": k, "measure": mu, "confidence_radius": rad}
            for k, (mu, rad) in sorted(rep.level_measures.items())
        ],
    }
    if rep.witnesses:
        report["detect"]["witness_degrees"] = \
            f"{rep.witnesses[0]} {rep.witnesses[1]}"
    return _finish(cfg, report)


def _cmd_pathology(args) -> int:
    cfg = RunConfig("pathology", seed=args.seed, out=None)
    os.makedirs(args.out, exist_ok=True)
    manifest = {"run": _run_section(cfg)}
    files = {}
    if args.generator == "ms":
        params = MSParams(k=args.k, rho=args.rho,
                          bend_radius=args.bend_radius)
        element = ms_element(params)
        limit = ms_limit(params)
        files["element"] = f"ms_element_k{args.k}.map"
        files["limit"] = "ms_limit.map"
        write_map(os.path.join(args.out, files["element"]), element)
        write_map(os.path.join(args.out, files["limit"]), limit)
        manifest["parameters"] = {
            "k": params.k, "rho": params.rho,
            "bend_radius": params.bend_radius,
            "body_length": params.body_length,
        }
    else:
        u1, u2, _ = crossing_scenario(angle=args.angle,
                                      resolution=args.resolution)
        files["u1"] = "crossing_u1.map"
        files["u2"] = "crossing_u2.map"
        write_map(os.path.join(args.out, files["u1"]), u1)
        write_map(os.path.join(args.out, files["u2"]), u2)
        manifest["parameters"] = {"angle": args.angle,
                                  "resolution": args.resolution}
    manifest["files"] = files
    emit_report(manifest, os.path.join(args.out, "manifest.txt"))
    print(f"wrote {len(files)} map files to {args.out}")
    return 0


def _cmd_rigidity(args) -> int:
    cfg = RunConfig("rigidity", seed=args.seed, out=args.out,
                    report_format=args.format)
    v = read_map(args.map)
    if not isinstance(v, PiecewiseAffineMap):
        raise InvalidArgumentError(f"{args.map} has no values block")
    rows = []
    scales = (1.0, 0.5, 0.25)
    for i, ball in enumerate(args.balls.split(";")):
        parts = _parse_point(ball)
        center, radius = parts[:-1], float(parts[-1])
        for scale in scales:
            try:
                fit = rigidity_fit(v, center, radius * scale, region_id=i)
            except EmptyRegionError:
                # Scaled ball fell below the mesh size; skip the scale.
                continue
            rows.append({
                "ball": i, "radius": radius * scale,
                "residual": fit.residual,
                "exact_rigid": fit.exact_rigid,
            })
    if not rows:
        raise InvalidArgumentError(
            "no requested ball contains any simplex")
    residuals = [r["residual"] for r in rows]
    report = {
        "run": _run_section(cfg),
        "rigidity": {"n_balls": len(args.balls.split(";")),
                     "max_residual": max(residuals),
                     "scales": " ".join(str(s) for s in scales)},
        "rows": rows,
    }
    print(f"max residual {max(residuals):.9g}")
    return _finish(cfg, report)


def _cmd_truncate(args) -> int:
    cfg = RunConfig("truncate", seed=args.seed, out=args.report,
                    report_format=args.format)
    f = read_map(args.map)
    if not isinstance(f, PiecewiseAffineMap):
        raise InvalidArgumentError(f"{args.map} has no values block")
    res = lipschitz_truncate(f, args.K)
    write_map(args.out, res.truncated)
    print(f"lipschitz bound {res.lipschitz_bound:.9g} "
          f"mismatch {res.mismatch_measure:.9g}")
    report = {
        "run": _run_section(cfg),
        "truncation": {
            "threshold": res.threshold,
            "lipschitz_bound": res.lipschitz_bound,
            "mismatch_measure": res.mismatch_measure,
            "excess_energy": res.excess_energy,
            "iterations": res.iterations,
            "converged": res.converged,
            "truncated_map": args.out,
        },
        "tolerances": {"K": args.K},
    }
    return _finish(cfg, report)


def _cmd_measure(args) -> int:
    cfg = RunConfig("measure", seed=args.seed, out=args.out,
                    delta=args.delta, report_format=args.format)
    pixels = read_pixelset(args.pixelset)
    est = premeasure(pixels, args.kind, args.m, args.delta)
    print(f"{args.kind} premeasure {est.value:.9g}")
    report = {
        "run": _run_section(cfg),
        "measure": {
            "kind": est.kind, "m": est.m, "delta": est.delta,
            "value": est.value, "cover_size": est.count,
        },
    }
    return _finish(cfg, report)


def _cmd_pipeline(args) -> int:
    raw = parse_config(args.config)
    hs = tuple(_parse_h(t) for t in
               raw.get("hs", "1/16,1/32,1/64").split(","))
    cfg = RunConfig(
        "pipeline",
        hs=hs,
        epsilon=float(raw.get("epsilon", "0.5")),
        tau=float(raw["tau"]) if "tau" in raw else None,
        delta=float(raw["delta"]) if "delta" in raw else None,
        samples=int(raw.get("samples", "256")),
        seed=int(raw.get("seed", "0")),
        out=args.out or raw.get("out"),
        report_format=raw.get("format", "structured-text"),
    )
    scenario = raw.get("scenario", "crossing")
    if scenario != "crossing":
        raise InvalidArgumentError(f"unknown scenario '{scenario}'")
    u1, u2, seq = crossing_scenario(
        separation=float(raw.get("separation", "0.5")),
        angle=float(raw.get("angle", "90")),
        resolution=int(raw.get("resolution", "24")),
        slab_thickness=float(raw.get("thickness", "0.3")),
    )
    spec = ExtensionSpec(thickness=float(raw.get("thickness", "0.3")),
                         delta=cfg.delta)
    ladder = seq.ladder(cfg.hs)
    premise = scaling_check([pair[1] for pair in ladder], cfg.epsilon)
    detect = check_simple_interpenetration(
        u1, u2, spec,
        n_samples=int(raw.get("detect_samples", "512")), seed=cfg.seed)
    result = noninvertibility_volume(
        ladder, u1, u2, spec, cfg.epsilon, tau=cfg.tau,
        n_field_samples=cfg.samples, seed=cfg.seed)
    rows = []
    for row in result["rows"]:
        flat = {}
        for key, value in row.items():
            if isinstance(value, list):
                for j, item in enumerate(value):
                    flat[f"{key}_{j}"] = item
            else:
                flat[key] = value
        rows.append(flat)
    report = {
        "run": _run_section(cfg),
        "premise": {"slope": premise["slope"],
                    "passed": premise["passed"],
                    "exact_rigid": premise["exact_rigid"]},
        "detect": {"verdict": detect.verdict,
                   "margin_self": detect.margins[0],
                   "margin_other": detect.margins[1]},
        "pipeline": {
            "passed": result["passed"],
            "failed_step": result["failed_step"] or "",
            "pinned_c": result["pinned_c"],
            "collar_delta": result.get("collar_delta", 0.0),
        },
        "tolerances": {
            "epsilon": cfg.epsilon,
            "degree_tolerance": detect.tolerance,
            "thickness": spec.thickness,
            "tau": cfg.tau if cfg.tau is not None else -1.0,
        },
        "rows": rows,
    }
    print(f"pipeline passed {result['passed']}")
    return _finish(cfg, report)


# -- argument parsing ------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(
        prog="platecheck",
        description="Degree-based interpenetration checks for "
                    "discretized thin plates.")
    top.add_argument("--version", action="version",
                     version=f"platecheck {__version__}")
    sub = top.add_subparsers(dest="subcommand", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default=None,
                       help="write a report_v1 file instead of stdout")
        p.add_argument("--format", default="structured-text",
                       choices=["structured-text", "csv"])

    p = sub.add_parser("degree", help="Brouwer degree of a map at a point")
    p.add_argument("--map", required=True)
    p.add_argument("--point", required=True, help="comma-separated")
    p.add_argument("--method", default="jacobian",
                   choices=["jacobian", "boundary", "integral"])
    p.add_argument("--tolerance", type=float, default=None)
    p.add_argument("--bump-radius", type=float, default=None)
    common(p)
    p.set_defaults(func=_cmd_degree)

    p = sub.add_parser("detect", help="simple-interpenetration test")
    p.add_argument("--u1", required=True)
    p.add_argument("--u2", required=True)
    p.add_argument("--thickness", type=float, required=True)
    p.add_argument("--mode", default="normal-offset",
                   choices=["normal-offset", "cone"])
    p.add_argument("--samples", type=int, default=512)
    p.add_argument("--tolerance", type=float, default=None)
    common(p)
    p.set_defaults(func=_cmd_detect)

    p = sub.add_parser("pathology", help="emit generator meshes/maps")
    p.add_argument("generator", choices=["ms", "crossing"])
    p.add_argument("--k", type=int, default=0)
    p.add_argument("--rho", type=float, default=0.25)
    p.add_argument("--bend-radius", type=float, default=1.5)
    p.add_argument("--angle", type=float, default=90.0)
    p.add_argument("--resolution", type=int, default=24)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_pathology)

    p = sub.add_parser("rigidity", help="rigid-motion fits on balls")
    p.add_argument("--map", required=True)
    p.add_argument("--balls", required=True,
                   help="semicolon-separated cx,cy[,cz],r")
    common(p)
    p.set_defaults(func=_cmd_rigidity)

    p = sub.add_parser("truncate", help="Lipschitz truncation")
    p.add_argument("--map", required=True)
    p.add_argument("--K", type=float, required=True)
    p.add_argument("--out", required=True, help="truncated map file")
    p.add_argument("--report", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", default="structured-text",
                   choices=["structured-text", "csv"])
    p.set_defaults(func=_cmd_truncate)

    p = sub.add_parser("measure", help="covering pre-measure of a pixel set")
    p.add_argument("--pixelset", required=True)
    p.add_argument("--kind", default="spherical",
                   choices=["hausdorff", "spherical", "packing"])
    p.add_argument("--m", type=float, required=True)
    p.add_argument("--delta", type=float, required=True)
    common(p)
    p.set_defaults(func=_cmd_measure)

    p = sub.add_parser("pipeline", help="full non-invertibility run")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_pipeline)

    return top


def run(argv=None) -> int:
    _apply_threads()
    args = _build_parser().parse_args(argv)
    return args.func(args)


def main(argv=None) -> int:
    try:
        return run(argv)
    except (InvalidArgumentError, BoundaryProximityError) as exc:
        print(f"platecheck: invalid input: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, PermissionError, IsADirectoryError) as exc:
        print(f"platecheck: {exc}", file=sys.stderr)
        return 2
    except PlatecheckError as exc:
        print(f"platecheck: internal invariant violated: {exc}",
              file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
