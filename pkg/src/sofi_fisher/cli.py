"""
CLI for sofi-fisher.

Commands:
    sofi-fisher fi-curve       - Fisher information per photon against θ
    sofi-fisher rgl            - Resolution gain limit of each scheme
    sofi-fisher zeta-max       - Full-data RGL of two-level blinking
    sofi-fisher sweep          - ζ over a grid of one parameter
    sofi-fisher tau-opt        - Frame time maximizing ζ (Markov blinking)
    sofi-fisher validate       - Self-check suites
    sofi-fisher antibunching   - RGL of two-photon frames
    sofi-fisher run CONFIG     - Run the command named in a config file
    sofi-fisher schema         - Print the parameter schema of every command

Every run command takes ``--config FILE`` (flat YAML with SweepConfig keys);
flags override file values. Exit codes: 0 ok (rows may carry flags),
1 usage, 2 numerical failure, 3 failed validation suite.
"""
import argparse
import csv
import io
import json
import os
import sys
from pathlib import Path

import yaml

from .engine import FisherEngine, SweepConfig
from .log import get_logger, set_level
from .protocol import EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, Protocol

log = get_logger(__name__)

OUTPUT_FORMAT = "sofi-fisher-output v1"
OUTPUT_DIR_ENV = "SOFI_FISHER_OUTPUT_DIR"


class _Parser(argparse.ArgumentParser):
    """ArgumentParser whose usage errors exit with status 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _count(text: str) -> int:
    """Integer flag that also takes scientific notation (``1e6``)."""
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid count: {text!r}") from None
    if not value.is_integer():
        raise argparse.ArgumentTypeError(f"count must be a whole number, got {text!r}")
    return int(value)


def load_config(path: str | Path) -> dict:
    """Read a flat YAML config; hyphenated keys are accepted."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    data = yaml.safe_load(path.read_text()) or {}
    if not isinstance(data, dict):
        raise ValueError(f"config file {path} must hold a mapping")
    return {str(key).replace("-", "_"): value for key, value in data.items()}


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.12g}"
    return str(value)


def format_csv(result: dict) -> str:
    """CSV with a ``#`` provenance line echoing the resolved parameters."""
    buffer = io.StringIO()
    buffer.write(f"# {OUTPUT_FORMAT} {json.dumps(result['params'], sort_keys=True)}\n")
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(result["columns"])
    for row in result["rows"]:
        writer.writerow([_cell(v) for v in row])
    return buffer.getvalue()


def format_json(result: dict) -> str:
    """The same table as JSON records."""
    columns = result["columns"]
    document = {
        "format": OUTPUT_FORMAT,
        "params": result["params"],
        "columns": columns,
        "rows": [dict(zip(columns, row)) for row in result["rows"]],
    }
    return json.dumps(document, indent=2, sort_keys=False) + "\n"


def write_output(result: dict, command: str) -> Path | None:
    """Write to ``output``, else ``$SOFI_FISHER_OUTPUT_DIR/<command>.<fmt>``, else stdout."""
    params = result["params"]
    fmt = params.get("format", "csv")
    text = format_json(result) if fmt == "json" else format_csv(result)

    if params.get("output"):
        path = Path(params["output"])
    elif os.environ.get(OUTPUT_DIR_ENV):
        path = Path(os.environ[OUTPUT_DIR_ENV]) / f"{command}.{fmt}"
    else:
        sys.stdout.write(text)
        sys.stdout.flush()
        return None

    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    log.info("output written", {"path": str(path), "rows": len(result["rows"])})
    return path


def _run_options() -> argparse.ArgumentParser:
    """Flags shared by every run command; unset flags leave file values alone."""
    p = _Parser(add_help=False, argument_default=argparse.SUPPRESS)
    p.add_argument("--config", "-c", help="flat YAML config file")

    emitters = p.add_argument_group("emitters")
    emitters.add_argument("--model", choices=["simplified", "markov"], help="blinking model")
    emitters.add_argument("--p", type=float, help="P(off) per frame (simplified model)")
    emitters.add_argument("--alpha", type=float, help="fluctuation strength 1 - q_off/q_on")
    emitters.add_argument("--pbar", type=float, help="mean power P̄ in photons per τ₀")
    emitters.add_argument("--nbar", type=float, help="photons per frame n̄; sets P̄ = nbar/tau")
    emitters.add_argument("--tau", type=float, help="frame time in units of τ₀")
    emitters.add_argument("--tau-on", type=float, help="mean on-time (markov model)")
    emitters.add_argument("--tau-off", type=float, help="mean off-time (markov model)")

    detector = p.add_argument_group("detector")
    detector.add_argument("--dx", type=float, help="pixel size in units of σ")
    detector.add_argument("--mu-b", type=float, help="background photons per pixel per frame")

    sweep = p.add_argument_group("schemes and grids")
    sweep.add_argument("--schemes", "--scheme", dest="schemes", help="comma-separated schemes, e.g. M,M+AC2,M+XC2")
    sweep.add_argument("--axis", help="swept parameter: theta, tau, pbar, nbar, alpha, dx, p, mu_b")
    sweep.add_argument("--range", help="grid spec a:b:logN, a:b:linN or a comma list")
    sweep.add_argument("--thetas", help="θ grid for fi-curve")
    sweep.add_argument("--tau-min", type=float, help="lower frame-time bound of the optimization")
    sweep.add_argument("--tau-max", type=float, help="upper frame-time bound of the optimization")
    sweep.add_argument("--pix", action="store_true", help="report ζ against θ²/8σ⁴ instead of pixelated SI")
    sweep.add_argument("--optimize-tau", action="store_true", help="evaluate each point at its optimal frame time")
    sweep.add_argument("--rescale", action="store_true", help="divide ζ by n̄^(1/4)")

    checks = p.add_argument_group("validation")
    checks.add_argument("--frames", type=_count, help="frames per Monte Carlo suite")
    checks.add_argument("--samples", type=_count, help="frames for the score oracle")
    checks.add_argument("--seed", type=_count, help="random seed")
    checks.add_argument("--suites", help="comma-separated suites (default: all)")

    out = p.add_argument_group("output")
    out.add_argument("--threads", type=_count, help="worker threads (default: CPU count)")
    out.add_argument("--output", "-o", help="output file")
    out.add_argument("--format", choices=["csv", "json"], help="output format")
    out.add_argument("--verbose", "-v", action="store_true", help="log progress")
    out.add_argument("--debug", action="store_true", help="log everything")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="sofi-fisher",
        description="sofi-fisher: Fisher information and resolution gain limits of blinking emitters",
    )
    subparsers = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    options = _run_options()

    for name, method in FisherEngine()._methods.items():
        command = method._sofi_command
        doc = (method.__doc__ or "").strip().splitlines()
        subparsers.add_parser(command, parents=[options], help=doc[0] if doc else name)

    run_parser = subparsers.add_parser("run", parents=[options], help="Run the command named in a config file")
    run_parser.add_argument("file", help="config file with a command key")

    schema_parser = subparsers.add_parser("schema", help="Print the parameter schema of every command")
    schema_parser.add_argument("--format", choices=["json", "yaml"], default="json")
    return parser


def cmd_schema(args, engine: FisherEngine) -> int:
    schema = Protocol(engine).handle_schema()
    schema["config"] = SweepConfig.model_json_schema()
    if args.format == "yaml":
        sys.stdout.write(yaml.safe_dump(schema, sort_keys=False, allow_unicode=True))
    else:
        sys.stdout.write(json.dumps(schema, indent=2, ensure_ascii=False) + "\n")
    return EXIT_OK


def cmd_run(args, engine: FisherEngine) -> int:
    """Merge config file and flags, call the engine and write the table."""
    flags = vars(args)
    try:
        params = {}
        if args.command == "run":
            params.update(load_config(args.file))
        if "config" in flags:
            params.update(load_config(flags["config"]))
    except (OSError, ValueError, yaml.YAMLError) as e:
        log.error(str(e), {"type": type(e).__name__})
        return EXIT_USAGE

    params.update({k: v for k, v in flags.items() if k in SweepConfig.model_fields and k != "command"})
    if args.command != "run":
        params["command"] = args.command
    command = params.get("command")
    if command is None:
        log.error("config file names no command", {"file": args.file})
        return EXIT_USAGE

    engine.setup()
    try:
        response = Protocol(engine).handle_call(command, {"config": params})
    finally:
        engine.teardown()

    if not response["ok"]:
        error = response["error"]
        log.error(error["message"], {"type": error["type"]})
        log.debug("traceback", {"traceback": error["traceback"]})
        return error["exit_code"]

    result = response["result"]
    write_output(result, command)
    if result.get("failed"):
        log.warning("validation suites failed", {"failed": result["failed"]})
        return EXIT_VALIDATION
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    if getattr(args, "debug", False):
        set_level("debug")
    elif getattr(args, "verbose", False):
        set_level("info")

    engine = FisherEngine()
    if args.command == "schema":
        return cmd_schema(args, engine)
    return cmd_run(args, engine)


if __name__ == "__main__":
    sys.exit(main())
