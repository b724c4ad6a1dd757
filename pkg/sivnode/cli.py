"""
Command-line experiment runner.

Usage:
    python -m sivnode.cli gates
    python -m sivnode.cli phone --temperature 4.3 --shots 100000 --out out/phone
    python -m sivnode.cli sequence pulses.txt --shots 500
    python -m sivnode.cli validate --config my-config.json

Every run writes its plot-ready CSV tables, summary.json and manifest.json
into --out. Outputs are pure functions of (config, seed, shots, temperature).

Exit codes:
    0 - success
    1 - simulation error (partial outputs removed)
    2 - config schema violation (field paths printed to stderr)
"""

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import scipy

from sivnode import __version__
from sivnode.adapters.tables import read_pulse_file, to_json_data, write_csv, write_json
from sivnode.core.dependencies import create_experiment_runner, get_experiment_runner
from sivnode.core.errors import ConfigError, SequenceError, SimulationError
from sivnode.core.quantum import DensityMatrix
from sivnode.core.seeding import DEFAULT_SEED
from sivnode.models import ExperimentConfig
from sivnode.services import prometheus_metrics as prom
from sivnode.services.experiments import ExperimentOutput, RunRequest, Table
from sivnode.services.metrics import aggregate_metrics, record_shots, start_run_metrics, timed_io, timed_simulation
from sivnode.services.noise import NoiseModel
from sivnode.services.spin_register import run_experiment, validate_sequence
from sivnode.validation import config_hash, format_errors, load_config

logger = logging.getLogger(__name__)

MAX_SEED = 2**64 - 1
SEQUENCE_HEADER = ("outcome", "count", "probability")


def _seed(text: str) -> int:
    value = int(text)
    if not 0 <= value <= MAX_SEED:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _positive_int(text: str) -> int:
    value = int(text)
    if value <= 0:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return value


def _temperature(text: str) -> float:
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError("temperature must be positive (kelvin)")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="Config JSON merged over the shipped defaults (or $SIVNODE_CONFIG).")
    common.add_argument("--seed", type=_seed, default=None, help=f"Global seed (default: run.seed, {DEFAULT_SEED}).")
    common.add_argument("--shots", type=_positive_int, default=None, help="Monte Carlo shots (default per subcommand).")
    common.add_argument("--out", default=None, help="Output directory (default: out/<subcommand>).")
    common.add_argument("--temperature", type=_temperature, default=None, help="Temperature in kelvin.")
    common.add_argument("--log-level", default=None, help="Logging level (default: $SIVNODE_LOG_LEVEL or WARNING).")
    common.add_argument("--no-cache", action="store_true", help="Bypass the Redis result cache.")

    parser = argparse.ArgumentParser(prog="sivnode", description="SiV cavity-QED network-node simulator.")
    parser.add_argument("--version", action="version", version=f"sivnode {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in get_experiment_runner().names():
        sub.add_parser(name, parents=[common], help=f"run the {name} experiment")
    seq = sub.add_parser("sequence", parents=[common], help="simulate a pulse file on the register")
    seq.add_argument("pulse_file", help="Lines of `CHANNEL freq_hz rabi_hz phase_rad duration_s`.")
    seq.add_argument("--initial", type=int, default=0, help="Computational basis index of the initial state.")
    seq.add_argument("--noiseless", action="store_true", help="Disable OU detuning noise and T1 flips.")
    seq.add_argument("--windowed", action="store_true", help="Enforce whole RF periods per pulse (decoupled sequences).")
    sub.add_parser("validate", parents=[common], help="validate a config and print its hash")
    return parser


def configure_logging(level: Optional[str]) -> None:
    name = (level or os.environ.get("SIVNODE_LOG_LEVEL") or "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, name, logging.WARNING),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def run_sequence(config: ExperimentConfig, request: RunRequest, args: argparse.Namespace) -> ExperimentOutput:
    """Shot-by-shot register simulation of a pulse file."""
    shots = config.run.shots_for("sequence", request.shots)
    seq = read_pulse_file(args.pulse_file, windowed=args.windowed)
    problems = validate_sequence(seq)
    if problems:
        raise SequenceError("; ".join(problems))
    params = config.register.to_params()
    if not 0 <= args.initial < params.dim:
        raise SimulationError(f"--initial must be in [0, {params.dim})")
    noise = NoiseModel.noiseless() if args.noiseless else NoiseModel.from_register(params)
    with timed_simulation():
        result = run_experiment(seq, DensityMatrix.basis(params.dim, args.initial), params, noise, shots, request.seed)
    record_shots(shots)
    probs = result.probabilities()
    rows = [(label, int(c), float(p)) for label, c, p in zip(result.labels, result.counts, probs)]
    summary = {
        "subcommand": "sequence",
        "seed": request.seed,
        "shots": shots,
        "temperature": request.temperature,
        "pulse_file": Path(args.pulse_file).name,
        "pulses": len(seq),
        "duration_s": seq.duration,
        "noiseless": args.noiseless,
        **result.to_dict(),
    }
    return ExperimentOutput("sequence", summary, [Table("counts.csv", SEQUENCE_HEADER, rows)], shots)


def build_manifest(config: ExperimentConfig, output: ExperimentOutput, request: RunRequest, files: list[str]) -> dict:
    return {
        "subcommand": output.subcommand,
        "config_hash": config_hash(config),
        "seed": request.seed,
        "shots": output.summary.get("shots"),
        "temperature": request.temperature,
        "versions": {"sivnode": __version__, "numpy": np.__version__, "scipy": scipy.__version__},
        "outputs": sorted(files),
    }


def write_outputs(out_dir: Path, config: ExperimentConfig, output: ExperimentOutput, request: RunRequest) -> list[Path]:
    """Write tables, summary.json and manifest.json; remove what was written if any write fails."""
    written: list[Path] = []
    try:
        with timed_io():
            for table in output.tables:
                written.append(out_dir / table.filename)
                write_csv(written[-1], table.header, table.rows)
            written.append(out_dir / "summary.json")
            write_json(written[-1], output.summary)
            manifest = build_manifest(config, output, request, [p.name for p in written])
            written.append(out_dir / "manifest.json")
            write_json(written[-1], manifest)
    except BaseException:
        remove_outputs(written)
        raise
    for path in written:
        logger.info("Wrote %s", path)
    return written


def remove_outputs(paths: Sequence[Path]) -> None:
    for path in paths:
        try:
            path.unlink()
        except FileNotFoundError:
            pass


def print_report(output: ExperimentOutput) -> None:
    if output.subcommand == "gates":
        report = output.summary["swap_hold_read"]
        width = max(len(r["step"]) for r in report["rows"])
        for row in report["rows"]:
            print(f"{row['step']:<{width}}  {row['fidelity']:.3f}")
        print(f"{'total':<{width}}  {report['total']:.3f}")
        return
    print(json.dumps(to_json_data(output.summary), indent=2, sort_keys=True))


def _validate_only(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    print(f"Config OK ({config_hash(config)})")
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    name = args.subcommand
    metrics = start_run_metrics()
    try:
        if name == "validate":
            return _validate_only(args)
        config = load_config(args.config)
        request = RunRequest(
            seed=args.seed if args.seed is not None else config.run.seed,
            shots=args.shots,
            temperature=args.temperature,
        )
        if name == "sequence":
            output = run_sequence(config, request, args)
        else:
            runner = create_experiment_runner() if args.no_cache else get_experiment_runner()
            output, cached = runner.execute(name, config, request, use_cache=not args.no_cache)
            if cached:
                logger.info("%s served from the result cache", name)
        out_dir = Path(args.out or Path("out") / name)
        write_outputs(out_dir, config, output, request)
    except ConfigError as e:
        prom.record_run(name, "config_error")
        print(f"Config error: {e}", file=sys.stderr)
        for line in format_errors(e.errors):
            print(f"  {line}", file=sys.stderr)
        return 2
    except (SimulationError, OSError) as e:
        prom.record_run(name, "simulation_error")
        print(f"Error: {e}", file=sys.stderr)
        return 1
    aggregate_metrics.record(metrics)
    prom.record_run(name, "ok")
    logger.info("%s finished: %s", name, metrics.to_dict())
    print_report(output)
    return 0


if __name__ == "__main__":
    sys.exit(main())
