"""Command-line pipeline orchestration.

Every subcommand loads the JSON run config, validates it up front, derives
stage seeds from the global seed, and writes its artifacts plus a JSON
manifest into the output directory. Exit codes: 0 success, 1 validation
problem, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import pipeline
from .config import load_config
from .errors import NumericalError, ValidationError


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="path to the JSON run config")
    p.add_argument("--out", default=None, help="output directory (overrides config)")
    p.add_argument("--seed", type=int, default=None, help="global seed (overrides config)")
    p.add_argument("--threads", type=int, default=None, help="worker count (overrides config)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="charuq",
        description="Calibration and uncertainty-extension pipeline for the "
        "synthetic charring-ablator model",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run the solver and export TC profiles")
    _add_common(p)
    p.add_argument("--scenario", default="ground", help="scenario name from the config")
    p.add_argument("--params-file", default=None, help="JSON of material input overrides")

    p = sub.add_parser("synthesize-data", help="simulate plus multiplicative log noise")
    _add_common(p)
    p.add_argument("--scenario", default="ground")
    p.add_argument("--noise-sigma", type=float, default=None, help="log-scale noise sd")

    p = sub.add_parser("morris", help="elementary-effects screening of the inputs")
    _add_common(p)
    p.add_argument("--scenario", default="ground")

    p = sub.add_parser("pce", help="fit the frozen-time field surrogate")
    _add_common(p)
    p.add_argument("--scenario", default="ground")

    p = sub.add_parser("calibrate", help="MCMC calibration against a data CSV")
    _add_common(p)
    p.add_argument("--scenario", default="ground")
    p.add_argument(
        "--use-solver",
        action="store_true",
        help="evaluate the raw solver inside the chain instead of the surrogate",
    )

    p = sub.add_parser("propagate", help="posterior pushforward with intervals and MAP")
    _add_common(p)
    p.add_argument("--posterior", required=True, help="posterior CSV from calibrate")
    p.add_argument("--target", default="flight", help="scenario to predict")
    p.add_argument("--emulator", action="store_true", help="add emulator noise")
    p.add_argument("--samples", type=int, default=None, help="subsample count")
    p.add_argument("--variant", default="custom", help="output folder suffix")

    p = sub.add_parser("overlay", help="normalized-time envelope check")
    _add_common(p)
    p.add_argument("--threshold", type=float, default=290.0)

    p = sub.add_parser("sweep-w", help="mixture-weight divergence sweep and selection")
    _add_common(p)

    p = sub.add_parser("pipeline", help="full ground-to-flight extension flow")
    _add_common(p)

    return parser


def _dispatch(args: argparse.Namespace) -> int:
    cfg = load_config(
        args.config,
        out_override=args.out,
        seed_override=args.seed,
        threads_override=args.threads,
    )
    cfg.output_dir.mkdir(parents=True, exist_ok=True)

    if args.command == "simulate":
        overrides = {}
        if args.params_file:
            with open(args.params_file, "r", encoding="utf-8") as fh:
                overrides = json.load(fh)
        out = pipeline.stage_simulate(cfg, args.scenario, overrides)
        print(f"wrote {out['tc_csv']}")
    elif args.command == "synthesize-data":
        out = pipeline.stage_synthesize(cfg, args.scenario, args.noise_sigma)
        print(f"wrote {out['data_csv']} (noise sigma {out['noise_sigma']:g})")
    elif args.command == "morris":
        out = pipeline.stage_morris(cfg, args.scenario)
        print(f"influential inputs: {', '.join(out['influential']) or '(none)'}")
        print(f"wrote {out['stats_csv']}")
    elif args.command == "pce":
        out = pipeline.stage_pce(cfg, args.scenario)
        print(f"wrote {out['surrogate_json']} (worst loo {out['worst_loo']:.3e})")
    elif args.command == "calibrate":
        out = pipeline.stage_calibrate(cfg, args.scenario, use_solver=args.use_solver)
        rates = ", ".join(f"{r:.2f}" for r in out["acceptance_rates"])
        print(f"wrote {out['posterior_csv']} (acceptance {rates})")
    elif args.command == "propagate":
        posterior = pipeline.load_posterior_csv(args.posterior)
        _, out = pipeline.stage_propagate(
            cfg,
            posterior,
            args.target,
            emulator=args.emulator,
            variant=args.variant,
            n_samples=args.samples,
            stage="propagate-custom",
        )
        print(f"wrote {out['dir']}")
    elif args.command == "overlay":
        out = pipeline.stage_overlay(cfg, args.threshold)
        print(f"overlay verdict: {out['verdict']} ({out['overlay_json']})")
    elif args.command == "sweep-w":
        ground_post = pipeline.load_posterior_csv(cfg.output_dir / "posterior_ground.csv")
        flight_post = pipeline.load_posterior_csv(cfg.output_dir / "posterior_flight.csv")
        reference, _ = pipeline.stage_propagate(
            cfg,
            flight_post,
            "flight",
            emulator=True,
            variant="flight_reference",
            n_samples=cfg.mixture.propagate_samples,
            stage="propagate-reference",
        )
        out = pipeline.stage_sweep(cfg, ground_post, reference, "flight")
        print(
            f"wrote {out['table_csv']}; w*(Jeffreys) = {out['w_jeffreys']:g}, "
            f"w*(backward KL) = {out['w_backward_kl']:g}"
        )
    elif args.command == "pipeline":
        report = pipeline.run_pipeline(cfg)
        cov = report["coverage_95"]
        print(
            "coverage@95%: parametric "
            f"{cov['parametric_only']:.3f}, emulator {cov['ground_emulator']:.3f}"
        )
        print(
            f"w*(Jeffreys) = {report['sweep']['w_jeffreys']:g}, "
            f"w*(backward KL) = {report['sweep']['w_backward_kl']:g}"
        )
        print(f"wrote {report['report_json']}")
    else:  # pragma: no cover - argparse enforces the choices
        raise ValidationError(f"unknown command {args.command!r}")
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except (ValidationError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
