"""Command-line front end.

Exit codes:

* 0 success (for ``check``: Identifiable)
* 1 usage error (bad flags, missing files)
* 2 a computation failed (invalid Q-matrix or parameters, no convergence)
* 3 ``check`` verdict NotIdentifiable
* 4 ``check`` verdict Undetermined

With ``--json`` failures print ``{"error": ..., "message": ...}`` on stdout.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import datasets, equivalence, gpdina, seqdina
from .conditions import Verdict, check
from .core import PolydinaError, QKind, QMatrix, parse_q_matrix, random_proportions
from .estimate import em_fit, nonidentifiability_probe, random_init
from .gpdina import GpdinaParams
from .identnum import KINDS, construct_counterexample, jacobian_rank, verify_counterexample
from .seqdina import SeqParams

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_FAILURE = 2
VERDICT_EXIT = {Verdict.IDENTIFIABLE: 0, Verdict.NOT_IDENTIFIABLE: 3, Verdict.UNDETERMINED: 4}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# -- input helpers -------------------------------------------------------------


def _kind(model: str) -> QKind:
    return QKind.GPDINA if model == "gpdina" else QKind.SEQUENTIAL


def _read_text(path: str | None, flag: str) -> str:
    if path is None:
        raise UsageError(f"{flag} is required")
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from exc


def _load_q(args) -> QMatrix:
    return parse_q_matrix(_read_text(args.q, "--q"), _kind(args.model))


def _load_params(path: str | None, model: str) -> tuple[object, np.ndarray | None]:
    try:
        doc = json.loads(_read_text(path, "--params"))
    except json.JSONDecodeError as exc:
        raise PolydinaError(f"{path}: invalid JSON ({exc.msg})") from exc
    p = np.asarray(doc["p"], dtype=float) if "p" in doc else None
    try:
        if model == "gpdina":
            params = GpdinaParams.from_lists(doc["theta_plus"], doc["theta_minus"])
        else:
            params = SeqParams.from_lists(doc["beta_plus"], doc["beta_minus"])
    except KeyError as exc:
        raise PolydinaError(f"{path}: missing field {exc.args[0]!r} for model {model}") from exc
    return params, p


def _params_or_random(args, q: QMatrix):
    if args.params:
        params, p = _load_params(args.params, args.model)
        if p is None:
            raise PolydinaError("the parameter file needs a 'p' entry")
        return params, p
    rng = np.random.default_rng(args.seed)
    module = gpdina if q.kind is QKind.GPDINA else seqdina
    return module.random_params(q, rng), random_proportions(q.K, rng)


def _load_data(path: str | None) -> np.ndarray:
    text = _read_text(path, "--data")
    rows = [line for line in text.splitlines() if line.strip() and not line.lstrip().startswith("#")]
    if not rows:
        raise PolydinaError(f"{path}: no data rows")
    try:
        return np.array([[int(v) for v in line.split(",")] for line in rows], dtype=np.int64)
    except ValueError as exc:
        raise PolydinaError(f"{path}: responses must be comma-separated integers") from exc


def _emit(args, text: str) -> None:
    if getattr(args, "out", None):
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _emit_json(args, doc: dict) -> None:
    _emit(args, json.dumps(doc, indent=2, ensure_ascii=False) + "\n")


# -- subcommands ---------------------------------------------------------------


def cmd_check(args) -> int:
    report = check(_load_q(args))
    if args.json or args.out:
        _emit_json(args, report.as_json())
    else:
        lines = [f"model: {report.model}  K={report.K}  J={report.J}"]
        for r in report.results:
            status = "holds" if r.holds else "fails"
            lines.append(f"  {r.condition_id:7s} {status}" + (f": {r.witness}" if r.witness else ""))
        lines += [f"  note: {n}" for n in report.notes]
        lines.append(f"verdict: {report.verdict.value}")
        _emit(args, "\n".join(lines) + "\n")
    return VERDICT_EXIT[report.verdict]


def cmd_tmatrix(args) -> int:
    q = _load_q(args)
    params, _ = _load_params(args.params, args.model)
    t = gpdina.build_t_matrix(q, params) if q.kind is QKind.GPDINA else seqdina.build_ts_matrix(q, params)
    _emit(args, t.to_csv(q.K))
    return EXIT_OK


def cmd_simulate(args) -> int:
    q = _load_q(args)
    params, p = _params_or_random(args, q)
    module = gpdina if q.kind is QKind.GPDINA else seqdina
    data = module.sample(q, params, p, args.n, seed=args.seed)
    if not args.out:
        raise UsageError("simulate needs --out for the response CSV")
    header = "# " + ",".join(f"item{j + 1}" for j in range(q.J))
    body = "\n".join(",".join(map(str, row)) for row in data)
    Path(args.out).write_text(header + "\n" + body + "\n", encoding="utf-8")
    summary = {"model": args.model, "n": args.n, "seed": args.seed, "out": args.out, "truth": {**params.to_json(), "p": list(map(float, p))}}
    sys.stdout.write(json.dumps(summary, indent=2) + "\n")
    return EXIT_OK


def cmd_fit(args) -> int:
    q = _load_q(args)
    data = _load_data(args.data)
    if args.starts > 1:
        probe = nonidentifiability_probe(q, data, n_starts=args.starts, seed=args.seed)
        _emit_json(args, {"model": args.model, **probe.as_json()})
        return EXIT_OK
    if args.params:
        init = _load_params(args.params, args.model)
        if init[1] is None:
            init = (init[0], np.full(2**q.K, 2.0**-q.K))
    else:
        init = random_init(q, np.random.default_rng(args.seed))
    fit = em_fit(q, data, init)
    _emit_json(args, {"model": args.model, **fit.as_json()})
    return EXIT_OK


def cmd_convert(args) -> int:
    params, p = _load_params(args.params, args.model)
    if args.model == "seq":
        q = _load_q(args)
        out = equivalence.seq_to_gpdina(params, q)
    else:
        out = equivalence.gpdina_to_seq(params)
    doc = out.to_json()
    if p is not None:
        doc["p"] = p.tolist()
    _emit_json(args, doc)
    return EXIT_OK


def cmd_counterexample(args) -> int:
    if args.kind is None:
        raise UsageError("--kind is required")
    q = _load_q(args)
    params, p = _params_or_random(args, q)
    pair = construct_counterexample(q, args.kind, params, p, eps=args.eps, kappa=args.kappa)
    report = verify_counterexample(pair)
    _emit_json(args, {**pair.as_json(), "verification": report.as_json()})
    return EXIT_OK


def cmd_rank(args) -> int:
    q = _load_q(args)
    params, p = _params_or_random(args, q)
    report = jacobian_rank(q, params, p, allow_boundary=args.allow_boundary)
    _emit_json(args, {"model": args.model, **report.as_json()})
    return EXIT_OK


def cmd_datasets(args) -> int:
    directory = args.out or "."
    written = datasets.write_all(directory)
    doc = {"files": [{"path": str(path), "sha256": datasets.sha256(path.name)} for path in written]}
    sys.stdout.write(json.dumps(doc, indent=2, ensure_ascii=False) + "\n")
    return EXIT_OK


COMMANDS = {
    "check": (cmd_check, "evaluate the identifiability conditions of a Q-matrix"),
    "tmatrix": (cmd_tmatrix, "write the T-matrix (GPDINA) or survival matrix (sequential) as CSV"),
    "simulate": (cmd_simulate, "simulate responses"),
    "fit": (cmd_fit, "fit by EM; with --starts > 1, run the multi-start probe"),
    "convert": (cmd_convert, "map parameters between the two models"),
    "counterexample": (cmd_counterexample, "build two parameter sets with the same distribution"),
    "rank": (cmd_rank, "finite-difference Jacobian rank at a parameter point"),
    "datasets": (cmd_datasets, "write the bundled Q-matrices"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="polydina", description="Identifiability tools for polytomous DINA models.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--json", action="store_true", help="machine-readable output and errors")
        p.add_argument("--out", help="output path (a directory for 'datasets')")
        if name == "datasets":
            continue
        p.add_argument("--model", choices=("gpdina", "seq"), required=True)
        p.add_argument("--q", help="Q-matrix CSV")
        p.add_argument("--params", help="parameter JSON")
        p.add_argument("--seed", type=int, default=0)
        if name == "simulate":
            p.add_argument("--n", type=int, default=1000)
        if name in ("fit",):
            p.add_argument("--data", help="response CSV, one respondent per row")
            p.add_argument("--starts", type=int, default=1)
        if name == "counterexample":
            p.add_argument("--kind", choices=KINDS)
            p.add_argument("--eps", type=float, default=0.01)
            p.add_argument("--kappa", type=float, default=0.5)
        if name == "rank":
            p.add_argument("--allow-boundary", action="store_true", help="accept item parameters exactly at 0")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    wants_json = "--json" in argv
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required: " + ", ".join(COMMANDS))
        return COMMANDS[args.command][0](args)
    except UsageError as exc:
        return _fail(wants_json, "usage", str(exc), EXIT_USAGE, parser)
    except (PolydinaError, KeyError, OSError) as exc:
        return _fail(wants_json, type(exc).__name__, str(exc), EXIT_FAILURE)


def _fail(wants_json: bool, kind: str, message: str, code: int, parser=None) -> int:
    if wants_json:
        sys.stdout.write(json.dumps({"error": kind, "message": message, "exit_code": code}) + "\n")
    else:
        if parser is not None:
            parser.print_usage(sys.stderr)
        sys.stderr.write(f"polydina: error: {message}\n")
    return code


if __name__ == "__main__":
    sys.exit(main())
