"""Command-line entry point.

Usage::

    genssbf VERB --config PATH [--set KEY=VALUE ...] [--seed N]

Exit codes: 0 success, 2 usage error, 3 invalid configuration, 4 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import datafile, harness
from .config import ConfigError, ExperimentConfig, apply_overrides, read_document, validate

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3, 4

VERBS = ("gen-dataset", "train-diffusion", "train-regressor", "evaluate", "beampattern",
         "phase-demo", "validate-config")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="genssbf", description="Generative site-specific beamforming experiments.")
    p.add_argument("verb", choices=VERBS)
    p.add_argument("--config", required=True, help="path to a JSON experiment config")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="dotted-path override, e.g. array.num_antennas=8 (repeatable)")
    p.add_argument("--seed", type=int, help="override the config seed")
    return p


def resolve_config(args) -> ExperimentConfig:
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    return validate(apply_overrides(read_document(args.config), overrides))


def _gen_dataset(cfg: ExperimentConfig) -> None:
    harness.write_manifest(cfg, "gen-dataset")
    path = Path(cfg.output_dir) / "dataset.gsbf"
    datafile.write_dataset(path, harness.build_dataset(cfg))
    harness.write_manifest(cfg, "gen-dataset", ["run_manifest.json", "dataset.gsbf",
                                                "dataset.gsbf.meta.json"], status="complete")
    print(path)


def _evaluate(cfg: ExperimentConfig) -> None:
    records = harness.run_experiment(cfg, "evaluate", lambda s: print(s, file=sys.stderr))
    for r in records:
        print(f"{r.method:15s} M={r.M:<3d} mean={r.mean_gain:.4f} p5={r.p5_gain:.4f}")
    print(Path(cfg.output_dir) / "gains.csv")


def _beampattern(cfg: ExperimentConfig) -> None:
    harness.write_manifest(cfg, "beampattern")
    written = harness.write_beampatterns(cfg)
    harness.write_manifest(cfg, "beampattern", ["run_manifest.json"] + written, status="complete")
    for w in written:
        print(Path(cfg.output_dir) / w)


def _phase_demo(cfg: ExperimentConfig) -> None:
    harness.write_manifest(cfg, "phase-demo")
    rel = harness.run_phase_demo(cfg)
    harness.write_manifest(cfg, "phase-demo", ["run_manifest.json", rel], status="complete")
    print(Path(cfg.output_dir) / rel)


def dispatch(verb: str, cfg: ExperimentConfig) -> None:
    if verb == "validate-config":
        print("config ok")
    elif verb == "gen-dataset":
        _gen_dataset(cfg)
    elif verb == "train-diffusion":
        harness.train_all(cfg, want_diffusion=True, want_regressor=False, command=verb)
    elif verb == "train-regressor":
        harness.train_all(cfg, want_diffusion=False, want_regressor=True, command=verb)
    elif verb == "evaluate":
        _evaluate(cfg)
    elif verb == "beampattern":
        _beampattern(cfg)
    elif verb == "phase-demo":
        _phase_demo(cfg)


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = resolve_config(args)
        harness.worker_count()
    except ConfigError as err:
        for problem in err.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    print("resolved config:", json.dumps(cfg.to_dict(), indent=2), file=sys.stderr)
    print(f"seed: {cfg.seed}", file=sys.stderr)
    try:
        dispatch(args.verb, cfg)
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as err:  # noqa: BLE001 - every failure maps to one exit code
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
