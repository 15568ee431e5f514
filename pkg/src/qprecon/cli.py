"""Command-line entry point: ``qprecon <verb> ...``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bencode import BlockEncoding, encode_banded, encode_clai_product, multiply_encodings
from .emu import EmulationError, verify_encoding
from .matcore import (
    BandedMatrix,
    MatrixError,
    MatrixSource,
    banded_multiply,
    drop_zero_diagonals,
    generate_test_matrix,
    read_json,
    read_matrix_market,
    write_json,
    write_matrix_market,
)
from .precond import PreconditionerSpec, build_preconditioner, clai_apply, count_nonzero_diagonals
from .sweep import (
    SCHEMA_VERSION,
    ConfigError,
    SweepConfig,
    emit_report,
    encode_precon,
    load_config,
    read_report,
    report_csv,
    run_sweep,
)
from .trim import collapse_rotations, filter_matrix, trimming_metrics

KIND_ALIASES = {"2d": "generated-2d-pressure", "3d": "generated-3d-laplacian"}


# ---------------------------------------------------------------------------
# argument helpers


def parse_source(text: str) -> MatrixSource:
    """``2d:16x16``, ``2d:16x16:j0.3:s1``, ``3d:4x4x4`` or a path to a ``.mtx`` file."""
    if text.endswith(".mtx"):
        return MatrixSource("matrix-market-file", path=text)
    parts = text.split(":")
    kind = KIND_ALIASES.get(parts[0], parts[0])
    if len(parts) < 2:
        raise argparse.ArgumentTypeError(f"source {text!r} needs mesh dims, e.g. 2d:16x16")
    jitter, seed = 0.0, 0
    for extra in parts[2:]:
        if extra.startswith("j"):
            jitter = float(extra[1:])
        elif extra.startswith("s"):
            seed = int(extra[1:])
        else:
            raise argparse.ArgumentTypeError(f"unknown source option {extra!r}")
    try:
        dims = tuple(int(d) for d in parts[1].split("x"))
        return MatrixSource(kind, dims, jitter=jitter, seed=seed)
    except (ValueError, MatrixError) as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def parse_precon(text: str) -> PreconditionerSpec:
    """``DS``, ``CLAI``, ``SPAI:3``, ``SPAI-it:2``, ``TPAI:1``."""
    name, _, level = text.partition(":")
    infill = int(level) if level else 0
    try:
        if name.upper() == "SPAI-IT":
            return PreconditionerSpec("SPAI", method="iterative", infill=infill)
        return PreconditionerSpec(name.upper(), infill=infill)
    except (ValueError, MatrixError) as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def load_matrix(path: str) -> BandedMatrix:
    p = Path(path)
    if p.suffix == ".json":
        return read_json(p)
    return read_matrix_market(p)


def save_matrix(m: BandedMatrix, path: str, comment: str = "") -> None:
    if Path(path).suffix == ".json":
        write_json(m, path)
    else:
        write_matrix_market(m, path, comment)


def _input_matrix(args) -> BandedMatrix:
    if args.matrix:
        return load_matrix(args.matrix)
    return generate_test_matrix(args.source)


def _add_input(p: argparse.ArgumentParser):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--matrix", help="input matrix (.mtx or .json)")
    g.add_argument("--source", type=parse_source, default=parse_source("2d:4x4"),
                   help="generated source, e.g. 2d:16x16 or 2d:32x32:j0.3:s1 (default 2d:4x4)")


def _print_json(obj) -> None:
    print(json.dumps(obj, indent=1, default=_json_default))


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def _build_encoding(args) -> tuple[BlockEncoding, np.ndarray]:
    """Encoding of the scaled (optionally preconditioned) input and its dense target."""
    pre = build_preconditioner(args.precon, _input_matrix(args))
    a = pre.a
    if pre.clai is not None:
        if args.multiplication != "quantum":
            raise MatrixError("CLAI has only a quantum-multiplication encoding")
        enc = encode_clai_product(pre.clai, encode_banded(a))
        return enc, clai_apply(pre.clai, a)
    if args.multiplication == "quantum":
        enc = multiply_encodings(encode_precon(pre.p), encode_banded(a))
        return enc, banded_multiply(pre.p, a).to_dense()
    pa = drop_zero_diagonals(banded_multiply(pre.p, a))
    return encode_banded(pa), pa.to_dense()


# ---------------------------------------------------------------------------
# verbs


def cmd_gen(args) -> int:
    m = generate_test_matrix(args.source)
    if args.out:
        save_matrix(m, args.out, comment=args.source.label)
    summary = {"source": args.source.label, "n": m.n, "offsets": m.offsets}
    if "warning" in m.meta:
        summary["warning"] = m.meta["warning"]
    _print_json(summary)
    return 0


def cmd_precon(args) -> int:
    pre = build_preconditioner(args.precon, _input_matrix(args))
    out = {"precon": args.precon.label, "n": pre.a.n, "r_p": pre.r_p}
    if pre.p is not None:
        full = banded_multiply(pre.p, pre.a)
        out.update(diag_P=pre.p.ndiag, diag_PA=full.ndiag, diag_PA_nonzero=count_nonzero_diagonals(full))
        if args.out:
            save_matrix(pre.p, args.out, comment=args.precon.label)
    else:
        out["lambda_min"] = pre.clai.lambda_min
        if args.out:
            np.save(args.out, pre.clai.lam)
    _print_json(out)
    return 0


def cmd_encode(args) -> int:
    enc, _ = _build_encoding(args)
    if args.out:
        Path(args.out).write_text(json.dumps(enc.to_json_obj()))
    _print_json(enc.summary())
    return 0


def cmd_verify(args) -> int:
    if args.encoding:
        if not args.target:
            raise MatrixError("--encoding needs --target")
        enc = BlockEncoding.from_json_obj(json.loads(Path(args.encoding).read_text()))
        target = load_matrix(args.target).to_dense()
    else:
        enc, target = _build_encoding(args)
    report = verify_encoding(enc, target, tol=args.tol)
    print(report.to_json())
    return 0 if report.passed else 1


def cmd_trim(args) -> int:
    pre = build_preconditioner(args.precon, _input_matrix(args))
    if pre.p is None:
        raise MatrixError("trim works on banded products; CLAI is dense")
    pa = drop_zero_diagonals(banded_multiply(pre.p, pre.a))
    before = encode_banded(pa).circuit
    b = np.ones(pa.n)
    rows = []
    for f in args.trim_f or [0.0]:
        pa_f = filter_matrix(pa, f)
        after = collapse_rotations(encode_banded(pa_f).circuit)
        st = trimming_metrics(pa, pa_f, b, before, after, f)
        rows.append({
            "f": f,
            "unique_angles_before": st.unique_angles_before,
            "unique_angles_after": st.unique_angles_after,
            "rotations_before": st.rotations_before,
            "rotations_after": st.rotations_after,
            "rotation_ratio": st.rotation_ratio,
            "l2_solution_error": st.l2_solution_error,
        })
    if args.out:
        Path(args.out).write_text(json.dumps(rows, indent=1) + "\n")
    _print_json(rows)
    return 0


def _config_from_args(args) -> SweepConfig:
    if args.config:
        cfg = load_config(args.config)
    else:
        if not args.sources:
            raise ConfigError("give --config or at least one --sources entry")
        cfg = SweepConfig(sources=args.sources, preconditioners=args.preconditioners or [PreconditionerSpec("DS")])
    # flags override the file
    for name in ("multiplication", "trim_f", "parallelism", "emulate_max_qubits", "csv_path", "json_path"):
        val = getattr(args, name)
        if val is not None:
            setattr(cfg, name, val)
    if args.config and args.sources:
        cfg.sources = args.sources
    if args.config and args.preconditioners:
        cfg.preconditioners = args.preconditioners
    cfg.__post_init__()
    return cfg


def cmd_sweep(args) -> int:
    cfg = _config_from_args(args)
    if args.dump_config:
        _print_json(cfg.to_json_obj())
        return 0
    report = run_sweep(cfg)
    written = emit_report(report, cfg.csv_path, cfg.json_path)
    if not written:
        sys.stdout.write(report_csv(report))
    for row in report.error_rows:
        print(f"error: {row['source']} {row['precon']} {row['method']} f={row['f']}: {row['error']}",
              file=sys.stderr)
    return 0 if report.ok else 1


def cmd_report(args) -> int:
    report = read_report(args.input)
    if args.csv:
        emit_report(report, csv_path=args.csv)
    cols = args.columns.split(",")
    widths = [max(len(c), 12) for c in cols]
    print("  ".join(c.rjust(w) for c, w in zip(cols, widths)))
    for row in report.rows:
        cells = []
        for c, w in zip(cols, widths):
            v = row.get(c)
            text = "" if v is None else (f"{v:.6g}" if isinstance(v, float) else str(v))
            cells.append(text.rjust(w))
        print("  ".join(cells))
    return 0 if report.ok else 1


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qprecon", description=__doc__)
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("gen", help="generate a test matrix")
    p.add_argument("--source", type=parse_source, required=True)
    p.add_argument("--out", help="write .mtx or .json")
    p.set_defaults(func=cmd_gen)

    def with_precon(p, default="DS"):
        _add_input(p)
        p.add_argument("--precon", type=parse_precon, default=parse_precon(default),
                       help="DS, CLAI, SPAI:<infill>, SPAI-it:<infill>, TPAI:<infill>")

    p = sub.add_parser("precon", help="build a preconditioner for the diagonally scaled matrix")
    with_precon(p)
    p.add_argument("--out", help="write P (.mtx/.json), or the CLAI spectrum (.npy)")
    p.set_defaults(func=cmd_precon)

    p = sub.add_parser("encode", help="build a block-encoding circuit")
    with_precon(p)
    p.add_argument("--multiplication", choices=("classical", "quantum"), default="classical")
    p.add_argument("--out", help="write the encoding as JSON")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("verify", help="emulate an encoding and compare with its target")
    with_precon(p)
    p.add_argument("--multiplication", choices=("classical", "quantum"), default="classical")
    p.add_argument("--encoding", help="encoding JSON written by 'encode'")
    p.add_argument("--target", help="target matrix for --encoding")
    p.add_argument("--tol", type=float, default=1e-9)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("trim", help="bin diagonals and collapse rotations over f values")
    with_precon(p, "SPAI:3")
    p.add_argument("--trim-f", dest="trim_f", type=float, nargs="+")
    p.add_argument("--out")
    p.set_defaults(func=cmd_trim)

    p = sub.add_parser("sweep", help="run a configured sweep and write the report")
    p.add_argument("--config", help=f"JSON config (schema_version {SCHEMA_VERSION})")
    p.add_argument("--sources", type=parse_source, nargs="+")
    p.add_argument("--preconditioners", type=parse_precon, nargs="+")
    p.add_argument("--multiplication", choices=("classical", "quantum", "both"))
    p.add_argument("--trim-f", dest="trim_f", type=float, nargs="+")
    p.add_argument("--parallelism", type=int)
    p.add_argument("--emulate-max-qubits", dest="emulate_max_qubits", type=int)
    p.add_argument("--csv", dest="csv_path")
    p.add_argument("--json", dest="json_path")
    p.add_argument("--dump-config", action="store_true", help="print the resolved config and exit")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="print a saved report")
    p.add_argument("input", help="report .json or .csv")
    p.add_argument("--csv", help="re-emit as CSV")
    p.add_argument("--columns", default="source,precon,method,f,s,kappa_s,rotations,l2_err,error")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (MatrixError, EmulationError, ConfigError, OSError) as exc:
        print(f"qprecon {args.verb}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
