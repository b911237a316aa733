"""Command-line interface: generate, simulate, calibrate, evaluate, serve.

Exit codes: 0 success, 2 configuration error, 3 solver/calibration failure.
The default output directory comes from --out, then the VENTSIM_OUTDIR
environment variable, then ./dataset.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .errors import (
    AlignmentError,
    CalibrationError,
    ConfigError,
    InitializationError,
    ScenarioError,
    SolverError,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3


def _default_outdir(args) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    return Path(os.environ.get("VENTSIM_OUTDIR", "dataset"))


def _build_config(args):
    from .datagen import RunConfig

    if args.config:
        cfg = RunConfig.from_json(args.config)
    else:
        cfg = RunConfig()
    overrides = {}
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    if args.records is not None:
        overrides["records"] = args.records
    if args.archetypes:
        overrides["archetypes"] = tuple(args.archetypes.split(","))
    if args.record_length is not None:
        overrides["record_length"] = args.record_length
    if args.rate is not None:
        overrides["respiratory_rate"] = args.rate
    if args.pipeline:
        overrides["pipeline"] = args.pipeline
    if args.target_vt is not None:
        overrides["target_vt"] = args.target_vt
    if getattr(args, "no_calibrate", False):
        overrides["calibrate"] = False
    if args.workers is not None:
        overrides["workers"] = args.workers
    settings_over = {}
    if args.peep is not None:
        settings_over["peep"] = args.peep
    if args.p_insp is not None:
        settings_over["p_insp"] = args.p_insp
    if settings_over:
        overrides["settings"] = cfg.settings.replace(**settings_over)
    if overrides:
        from dataclasses import replace

        cfg = replace(cfg, **overrides)
    return cfg


def _add_common_record_flags(sub):
    sub.add_argument("--config", help="RunConfig JSON file")
    sub.add_argument("--seed", type=int, help="master seed")
    sub.add_argument("--records", type=int, help="number of records")
    sub.add_argument("--archetypes", help="comma-separated archetype names")
    sub.add_argument("--record-length", type=float, dest="record_length")
    sub.add_argument("--rate", type=float, help="respiratory rate, breaths/min")
    sub.add_argument("--peep", type=float)
    sub.add_argument("--p-insp", type=float, dest="p_insp")
    sub.add_argument("--pipeline", choices=["closed_loop", "staged"])
    sub.add_argument("--target-vt", type=float, dest="target_vt")
    sub.add_argument("--no-calibrate", action="store_true", dest="no_calibrate")
    sub.add_argument("--workers", type=int)
    sub.add_argument("--out", help="output directory (or $VENTSIM_OUTDIR)")


def cmd_generate(args) -> int:
    from .datagen import generate_dataset

    cfg = _build_config(args)
    out = _default_outdir(args)
    manifest = generate_dataset(cfg, out)
    n_ok = len(manifest["records"])
    print(f"wrote {n_ok} record(s) to {out}")
    if manifest["failures"]:
        for f in manifest["failures"]:
            print(f"FAILED: {f}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def cmd_simulate(args) -> int:
    from .datagen import RunConfig, generate_record, write_record

    cfg = _build_config(args)
    if args.records is None:
        from dataclasses import replace

        cfg = replace(cfg, records=1)
    if cfg.calibrate:
        from .datagen import calibrate_pinsp

        p_insp = calibrate_pinsp(cfg.archetypes[0], cfg.settings,
                                 cfg.target_vt, cfg.vt_tolerance,
                                 cfg.tubing, cfg.solver,
                                 cfg.effort_for(cfg.archetypes[0]))
    else:
        p_insp = None
    channels, labels, intents, manifest = generate_record(cfg, 0, p_insp)
    out = _default_outdir(args)
    rec_dir = Path(out) / "records" / "rec_0000"
    write_record(rec_dir, channels, labels, intents, manifest)
    print(f"wrote {rec_dir} ({len(labels)} breaths)")
    if args.plot:
        from .plotting import plot_export

        plot_export(channels, labels, args.plot)
        print(f"wrote {args.plot}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    from .datagen import calibrate_pinsp
    from .ventilator import VentilatorSettings

    from .breath import default_effort_for

    settings = VentilatorSettings(
        peep=args.peep if args.peep is not None else 5.0,
        p_insp=args.p_insp if args.p_insp is not None else 15.0)
    p_insp = calibrate_pinsp(args.archetype, settings,
                             args.target_vt if args.target_vt is not None else 0.5,
                             effort=default_effort_for(args.archetype))
    print(json.dumps({"archetype": args.archetype, "peep": settings.peep,
                      "p_insp": p_insp,
                      "driving_pressure": p_insp - settings.peep}))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .datagen import evaluate

    out = _default_outdir(args)
    report = evaluate(args.dataset, args.predictions, out)
    order = ["EC", "LC", "DI", "Normal", "DI+LC", "DI+EC", "IE"]
    print("metric," + ",".join(order))
    for name, table in (("TPR", report.tpr), ("TNR", report.tnr),
                        ("PPV", report.ppv),
                        ("BalancedAccuracy", report.balanced_accuracy)):
        print(name + "," + ",".join(f"{table[c]:.2f}" for c in order))
    print(f"reports written to {out}")
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ventsim",
        description="Synthetic patient-ventilator waveform generator")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="generate a labeled dataset")
    _add_common_record_flags(g)
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("simulate", help="simulate a single record")
    _add_common_record_flags(s)
    s.add_argument("--plot", help="also write an SVG of the record")
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("calibrate", help="find P_insp for a target tidal volume")
    c.add_argument("--archetype", required=True)
    c.add_argument("--peep", type=float)
    c.add_argument("--p-insp", type=float, dest="p_insp")
    c.add_argument("--target-vt", type=float, dest="target_vt")
    c.set_defaults(func=cmd_calibrate)

    e = sub.add_parser("evaluate", help="score detector predictions")
    e.add_argument("--dataset", required=True)
    e.add_argument("--predictions", required=True)
    e.add_argument("--out")
    e.set_defaults(func=cmd_evaluate)

    v = sub.add_parser("serve", help="run the live simulation service")
    v.add_argument("--host", default="127.0.0.1")
    v.add_argument("--port", type=int, default=8000)
    v.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, AlignmentError) as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, CalibrationError, InitializationError,
            ScenarioError) as err:
        print(f"solver error: {err}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
