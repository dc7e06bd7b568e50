"""Command-line entry point: ``squeezing-ime <subcommand> --config <path|bundled name> --out <dir>``.

Exit codes: 0 success, 2 validation error, 3 non-convergence or failed
verification, 4 I/O error.  Failures print a one-line JSON error record on
stderr (and into ``<out>/error.json`` when the directory is writable).
"""

import argparse
import json
import sys
from pathlib import Path

from .config import BUNDLED, load_config
from .errors import DecompositionError, ValidationError
from .runner import EXIT_IO, EXIT_NOT_CONVERGED, EXIT_VALIDATION, run_scenario

SUBCOMMANDS = ("spectrum", "abmd", "hd-sweep", "optimize-ime", "decompose", "verify")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="squeezing-ime",
        description="Spectra, morphing supermodes, IME optimization and mesh synthesis for multimode squeezers.",
    )
    parser.add_argument("command", choices=SUBCOMMANDS)
    parser.add_argument("--config", required=True,
                        help=f"scenario YAML file or bundled name ({', '.join(BUNDLED)})")
    parser.add_argument("--out", default="out", help="output directory (default: %(default)s)")
    parser.add_argument("--grid-points", type=int, default=None, help="override grid.points (odd)")
    parser.add_argument("--grid-max", type=float, default=None, help="override grid.max")
    parser.add_argument("--seed", type=int, default=None, help="override optimize.seed")
    parser.add_argument("--netlist", default=None, help="netlist document for 'verify' (default: <out>/netlist.txt)")
    return parser


def _error(out, code, exc):
    record = {"status": "error", "exit_code": code, "type": type(exc).__name__, "message": str(exc)}
    line = json.dumps(record)
    print(line, file=sys.stderr)
    try:
        Path(out).mkdir(parents=True, exist_ok=True)
        (Path(out) / "error.json").write_text(line + "\n")
    except OSError:
        pass
    return code


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
        analysis = None if args.command == "verify" else args.command
        config = config.replace(analysis=analysis, grid_points=args.grid_points, grid_max=args.grid_max,
                                seed=args.seed)
        result = run_scenario(config, args.out, analysis=args.command, netlist_path=args.netlist)
    except ValidationError as exc:
        return _error(args.out, EXIT_VALIDATION, exc)
    except DecompositionError as exc:
        return _error(args.out, EXIT_NOT_CONVERGED, exc)
    except OSError as exc:
        return _error(args.out, EXIT_IO, exc)
    print(json.dumps({"status": "ok" if result.status == 0 else "not_converged", "exit_code": result.status,
                      "analysis": result.analysis, "files": list(result.files), "summary": result.summary}))
    return result.status


if __name__ == "__main__":
    sys.exit(main())
