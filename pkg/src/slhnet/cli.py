"""``slhnet`` command line: reduce, eliminate, check-commute, converge, validate, schur.

Exit codes: 0 pass, 1 parse error, 2 ill-posed network, 3 precondition
failure, 4 mismatch or failed convergence, 5 internal error.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from pathlib import Path

import numpy as np

from . import schur
from .netdsl import CompiledNetwork, ParseError, compile_network, parse_file
from .serialize import dumps
from .slh import (
    SLH,
    IllPosedNetworkError,
    OscillatorModel,
    PreconditionError,
    adiabatic_eliminate,
    check_commutativity,
    validate_network,
)

SCHEMA = "slhnet/1"
EXIT_PASS, EXIT_PARSE, EXIT_ILL_POSED, EXIT_PRECONDITION, EXIT_MISMATCH, EXIT_INTERNAL = range(6)


class _Exit(Exception):
    def __init__(self, code: int, message: str, report: dict | None = None):
        super().__init__(message)
        self.code = code
        self.report = report


def parse_ks(text: str) -> list[float]:
    try:
        ks = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad k list {text!r}") from None
    if not ks or any(k <= 0 for k in ks) or any(b <= a for a, b in zip(ks, ks[1:])):
        raise argparse.ArgumentTypeError("k values must be positive and strictly increasing")
    return ks


def parse_tgrid(text: str) -> list[float]:
    """``start:stop:step`` inclusive of ``stop`` when it lies on the grid."""
    try:
        start, stop, step = (float(x) for x in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"time grid must be start:stop:step, got {text!r}") from None
    if step <= 0 or stop < start or start < 0:
        raise argparse.ArgumentTypeError("time grid needs 0 <= start <= stop and step > 0")
    count = int(np.floor((stop - start) / step + 1e-9)) + 1
    return [start + j * step for j in range(count)]


def positive_float(text: str) -> float:
    val = float(text)
    if not val > 0:
        raise argparse.ArgumentTypeError("value must be positive")
    return val


def _load(path: str) -> CompiledNetwork:
    try:
        spec = parse_file(path)
    except OSError as exc:
        raise _Exit(EXIT_PARSE, f"{path}: {exc.strerror}") from None
    except ParseError as exc:
        raise _Exit(EXIT_PARSE, "\n".join(f"{path}:{d}" for d in exc.diagnostics)) from None
    if not spec.components:
        raise _Exit(EXIT_PARSE, f"{path}: no components declared")
    return compile_network(spec)


def _model_json(obj) -> dict:
    return obj.to_json()


def _residuals(t: SLH) -> dict:
    return t.residuals()


def _table_matrix(name: str, mat: np.ndarray) -> list[str]:
    lines = [f"{name} ="]
    for row in np.atleast_2d(mat):
        lines.append("  " + "  ".join(f"{z.real:+.6g}{z.imag:+.6g}i" for z in row))
    return lines


def _table_model(obj) -> list[str]:
    keys = ("S", "L", "K") if isinstance(obj, SLH) else ("S", "C", "G", "A", "Z", "X", "R")
    lines = []
    for key in keys:
        mat = getattr(obj, key)
        if mat.size:
            lines += _table_matrix(key, mat)
    return lines


# ---------------------------------------------------------------------------
# commands


def cmd_reduce(args) -> tuple[dict, list[str], int]:
    net = _load(args.file)
    reduced = net.reduce()
    report = {"model": _model_json(reduced), "connections": [list(c) for c in net.connections]}
    return report, _table_model(reduced), EXIT_PASS


def cmd_eliminate(args) -> tuple[dict, list[str], int]:
    net = _load(args.file)
    closed = net.reduce()
    model = closed if isinstance(closed, OscillatorModel) else OscillatorModel.from_slh(closed)
    if model.m == 0:
        raise _Exit(EXIT_PRECONDITION, "no oscillators: nothing to eliminate")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        limit = adiabatic_eliminate(model, tol=args.tol)
    res = _residuals(limit)
    report = {"limit": _model_json(limit), "residuals": res,
              "warnings": [str(w.message) for w in caught]}
    lines = _table_model(limit) + [f"unitarity residual {res['unitarity']:.3e}",
                                   f"damping residual {res['damping']:.3e}"]
    lines += [f"warning: {w}" for w in report["warnings"]]
    return report, lines, EXIT_PASS


def _report_lines(rep) -> list[str]:
    lines = []
    for name, p in rep.preconditions.items():
        lines.append(f"{'ok  ' if p.ok else 'FAIL'} {name:<34} {p.value:.6g}")
    if rep.quotient_conditions is not None:
        lines.append("schur conditions: " + " ".join("ok" if c else "FAIL" for c in rep.quotient_conditions))
    if rep.max_block_diff is not None:
        lines.append("max block diff: " + "  ".join(f"{k} {v:.3e}" for k, v in rep.max_block_diff.items()))
    lines += [f"warning: {w}" for w in rep.warnings]
    lines.append(f"verdict: {rep.verdict}")
    return lines


def cmd_check_commute(args) -> tuple[dict, list[str], int]:
    net = _load(args.file)
    rep = check_commutativity(net.components, net.connections, net.externals, tol=args.tol,
                              require_hurwitz=not args.allow_kernel)
    report = rep.to_json()
    if rep.path_af is not None:
        report["limit"] = _model_json(rep.path_fa)
    code = EXIT_PASS if rep.passed else (EXIT_PRECONDITION if not rep.hypotheses_met else EXIT_MISMATCH)
    return report, _report_lines(rep), code


def cmd_validate(args) -> tuple[dict, list[str], int]:
    net = _load(args.file)
    rep = validate_network(net.components, net.connections, net.externals,
                           require_hurwitz=not args.allow_kernel)
    report = rep.to_json()
    for key in ("max_block_diff", "schur_block_diff", "pass", "tol"):
        report.pop(key)
    report["verdict"] = "hypotheses met" if rep.hypotheses_met else "hypotheses not met"
    lines = _report_lines(rep)[:-1] + [f"verdict: {report['verdict']}"]
    return report, lines, EXIT_PASS if rep.hypotheses_met else EXIT_PRECONDITION


def cmd_converge(args) -> tuple[dict, list[str], int]:
    from .sim import convergence_study

    net = _load(args.file)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rep = convergence_study(net.model, net.connections, args.k, args.cutoff, None, args.t,
                                externals=net.externals, initial=args.initial, threshold=args.threshold)
    if args.csv:
        Path(args.csv).write_text(rep.to_csv(), encoding="utf-8")
    return rep.to_json(), rep.to_table().rstrip("\n").split("\n"), EXIT_PASS if rep.passed else EXIT_MISMATCH


def cmd_schur(args) -> tuple[dict, list[str], int]:
    try:
        data = json.loads(Path(args.file).read_text(encoding="utf-8"))
        M = schur.BlockMatrix.from_json(data)
    except OSError as exc:
        raise _Exit(EXIT_PARSE, f"{args.file}: {exc.strerror}") from None
    except (ValueError, KeyError, TypeError) as exc:
        raise _Exit(EXIT_PARSE, f"{args.file}: not a block matrix: {exc}") from None
    labels = [x for x in args.eliminate.split(",") if x]
    cols = [x for x in args.eliminate_cols.split(",") if x] if args.eliminate_cols else None
    try:
        wd = schur.check_well_defined(M, labels, cols, tol=args.tol)
    except (KeyError, ValueError) as exc:
        raise _Exit(EXIT_PARSE, f"bad labels: {exc}") from None
    if not wd:
        raise _Exit(EXIT_PRECONDITION, f"complement is not well defined: {wd.describe()}",
                    {"well_defined": False, "image_residual": wd.im_residual, "kernel_residual": wd.ker_residual})
    out = schur.complement(M, labels, cols, check=False)
    report = {"complement": out.to_json(), "image_residual": wd.im_residual, "kernel_residual": wd.ker_residual}
    return report, _table_matrix("complement", out.entries), EXIT_PASS


COMMANDS = {
    "reduce": cmd_reduce,
    "eliminate": cmd_eliminate,
    "check-commute": cmd_check_commute,
    "validate": cmd_validate,
    "converge": cmd_converge,
    "schur": cmd_schur,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="slhnet",
        description="Feedback reduction and adiabatic elimination for quantum input-output networks.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, file_help="network description (.slh)"):
        p.add_argument("file", help=file_help)
        p.add_argument("--out", help="write the report here instead of stdout")
        p.add_argument("--format", choices=("json", "table"), default="json")
        p.add_argument("--tol", type=positive_float, default=1e-9, help="comparison tolerance (default 1e-9)")
        return p

    common(sub.add_parser("reduce", help="close all feedback connections"))
    common(sub.add_parser("eliminate", help="adiabatic limit of the closed network"))
    p = common(sub.add_parser("check-commute", help="compare both limit orders"))
    p.add_argument("--allow-kernel", action="store_true",
                   help="accept non-strictly-Hurwitz blocks when the kernel condition holds")
    p = common(sub.add_parser("validate", help="hypothesis battery only"))
    p.add_argument("--allow-kernel", action="store_true")
    p = common(sub.add_parser("converge", help="finite-k master equation against the limit"))
    p.add_argument("--k", type=parse_ks, default=[2.0, 4.0, 8.0, 16.0], help="k ladder, e.g. 2,4,8,16")
    p.add_argument("--cutoff", type=int, default=8, help="Fock cutoff per oscillator (default 8)")
    p.add_argument("--t", type=parse_tgrid, default=parse_tgrid("0:5:0.1"), help="start:stop:step")
    p.add_argument("--threshold", type=positive_float, default=5e-2)
    p.add_argument("--initial", default="plus", help="slow initial state: plus or basis:j")
    p.add_argument("--csv", help="also write (k, t, observable, value) rows here")
    p = common(sub.add_parser("schur", help="generalized Schur complement of a block-matrix JSON file"),
               "block matrix JSON")
    p.add_argument("--eliminate", required=True, help="comma-separated row labels to eliminate")
    p.add_argument("--eliminate-cols", help="column labels, if different from the row labels")
    return parser


def _emit(args, report: dict, lines: list[str]) -> None:
    if args.format == "json":
        text = dumps({"schema": SCHEMA, "command": args.command, "input": args.file, **report})
    else:
        text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_PASS if exc.code == 0 else EXIT_PARSE
    if args.command == "converge" and args.cutoff < 2:
        print("error: cutoff must be at least 2", file=sys.stderr)
        return EXIT_PARSE
    try:
        report, lines, code = COMMANDS[args.command](args)
    except _Exit as exc:
        print(f"error: {exc}", file=sys.stderr)
        if exc.report is not None:
            _emit(args, {"error": str(exc), **exc.report}, [f"error: {exc}"])
        return exc.code
    except IllPosedNetworkError as exc:
        print(f"error: ill-posed network: {exc}", file=sys.stderr)
        return EXIT_ILL_POSED
    except PreconditionError as exc:
        print(f"error: precondition failed: {exc}", file=sys.stderr)
        _emit(args, {"error": str(exc), "cause": exc.cause}, [f"error: {exc}"])
        return EXIT_PRECONDITION
    except Exception as exc:  # noqa: BLE001 - the exit-code contract covers everything else
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    _emit(args, report, lines)
    return code


if __name__ == "__main__":
    sys.exit(main())
