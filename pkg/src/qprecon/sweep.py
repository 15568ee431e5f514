"""Configuration-driven sweeps over sources, preconditioners and trimming levels."""
from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bencode import (
    encode_banded,
    encode_clai_product,
    encode_toeplitz,
    max_amplification,
    multiply_encodings,
    preamp_figure_of_merit,
)
from .emu import extract_block, max_qubits
from .matcore import (
    BandedMatrix,
    MatrixSource,
    banded_multiply,
    drop_zero_diagonals,
    generate_test_matrix,
    kappa_sub,
    max_norm_scale,
    read_matrix_market,
    spectral_metrics,
)
from .precond import (
    PreconditionerSpec,
    build_preconditioner,
    clai_apply,
    count_nonzero_diagonals,
)
from .trim import collapse_rotations, filter_matrix, trimming_metrics

SCHEMA_VERSION = 1

COLUMNS = (
    "source", "N", "precon", "infill", "method", "s", "r_p", "sigma_min", "kappa",
    "kappa_s", "diag_P", "diag_PA", "diag_PA_nonzero", "rotations", "unique_angles",
    "f", "l2_err", "fom_plain", "fom_preamp",
)
# diagnostics appended after the fixed columns
EXTRA_COLUMNS = ("rotations_before", "unique_angles_before", "kappa_s_emulated", "verify_err", "error")
ALL_COLUMNS = COLUMNS + EXTRA_COLUMNS

MODES = {"classical": ("classical",), "quantum": ("quantum",), "both": ("classical", "quantum")}


class ConfigError(ValueError):
    pass


@dataclass
class SweepConfig:
    sources: list[MatrixSource]
    preconditioners: list[PreconditionerSpec]
    multiplication: str = "both"
    trim_f: list[float] = field(default_factory=lambda: [0.0])
    spectral_tol: float = 1e-10
    verify_tol: float = 1e-9
    csv_path: str | None = None
    json_path: str | None = None
    parallelism: int = 1
    emulate_max_qubits: int = 0  # cross-check kappa_s by emulation up to this many qubits
    delta: float = 0.1
    eps: float = 1e-3

    def __post_init__(self):
        if not self.sources:
            raise ConfigError("config needs at least one source")
        if not self.preconditioners:
            raise ConfigError("config needs at least one preconditioner")
        if self.multiplication not in MODES:
            raise ConfigError(f"multiplication must be one of {sorted(MODES)}")
        if not self.trim_f:
            raise ConfigError("trim_f needs at least one value (use [0] for no binning)")
        if any(not f >= 0 for f in self.trim_f):
            raise ConfigError("trim_f values must be >= 0")
        if self.parallelism < 1:
            raise ConfigError("parallelism must be >= 1")

    @classmethod
    def from_json_obj(cls, obj: dict) -> "SweepConfig":
        version = obj.get("schema_version")
        if version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")
        try:
            sources = [MatrixSource(**{**s, "dims": tuple(s.get("dims", ()))}) for s in obj["sources"]]
            precons = [PreconditionerSpec.from_dict(p) for p in obj["preconditioners"]]
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed config: {exc}") from exc
        tol = obj.get("tolerances", {})
        out = obj.get("output", {})
        preamp = obj.get("preamp", {})
        return cls(
            sources=sources,
            preconditioners=precons,
            multiplication=obj.get("multiplication", "both"),
            trim_f=[float(f) for f in obj.get("trim_f", [0.0])],
            spectral_tol=float(tol.get("spectral", 1e-10)),
            verify_tol=float(tol.get("verify", 1e-9)),
            csv_path=out.get("csv"),
            json_path=out.get("json"),
            parallelism=int(obj.get("parallelism", 1)),
            emulate_max_qubits=int(obj.get("emulate_max_qubits", 0)),
            delta=float(preamp.get("delta", 0.1)),
            eps=float(preamp.get("eps", 1e-3)),
        )

    def to_json_obj(self) -> dict:
        def src(s: MatrixSource) -> dict:
            d = {"kind": s.kind}
            if s.dims:
                d["dims"] = list(s.dims)
            if s.path:
                d["path"] = s.path
            if s.jitter:
                d["jitter"] = s.jitter
                d["seed"] = s.seed
            return d

        return {
            "schema_version": SCHEMA_VERSION,
            "sources": [src(s) for s in self.sources],
            "preconditioners": [p.to_dict() for p in self.preconditioners],
            "multiplication": self.multiplication,
            "trim_f": list(self.trim_f),
            "tolerances": {"spectral": self.spectral_tol, "verify": self.verify_tol},
            "output": {"csv": self.csv_path, "json": self.json_path},
            "parallelism": self.parallelism,
            "emulate_max_qubits": self.emulate_max_qubits,
            "preamp": {"delta": self.delta, "eps": self.eps},
        }


def load_config(path) -> SweepConfig:
    with open(path) as fh:
        return SweepConfig.from_json_obj(json.load(fh))


@dataclass
class SweepReport:
    rows: list[dict] = field(default_factory=list)

    @property
    def error_rows(self) -> list[dict]:
        return [r for r in self.rows if r.get("error")]

    @property
    def ok(self) -> bool:
        return not self.error_rows


# ---------------------------------------------------------------------------
# row construction


def load_source(source: MatrixSource) -> BandedMatrix:
    if source.kind == "matrix-market-file":
        return read_matrix_market(source.path)
    return generate_test_matrix(source)


def _blank(source: MatrixSource, spec: PreconditionerSpec, mode: str, f: float, n=None) -> dict:
    row = {c: None for c in ALL_COLUMNS}
    row.update(source=source.label, N=n, precon=spec.label, infill=spec.infill, method=mode, f=f)
    return row


def _error_row(source, spec, mode, f, n, exc) -> dict:
    row = _blank(source, spec, mode, f, n)
    row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def encode_precon(p: BandedMatrix):
    """Toeplitz encoding for a Toeplitz ``P`` (TPAI), banded encoding otherwise."""
    coeffs = p.meta.get("toeplitz")
    if coeffs and p.same_as(BandedMatrix.toeplitz(coeffs, p.n)):
        return encode_toeplitz(coeffs, p.n)
    return encode_banded(p)


def _dense_subnorm(a: np.ndarray) -> float:
    """Subnormalisation a banded encoding of dense ``a`` would have."""
    return sum(float(np.max(np.abs(v))) for v in BandedMatrix.from_dense(a).diagonals.values())


def _combination_rows(source: MatrixSource, spec: PreconditionerSpec, cfg: SweepConfig) -> list[dict]:
    modes = MODES[cfg.multiplication]
    try:
        raw = load_source(source)
        pre = build_preconditioner(spec, raw)
        a, r = max_norm_scale(pre.a)
    except Exception as exc:  # whole combination failed
        return [_error_row(source, spec, m, f, None, exc) for m in modes for f in cfg.trim_f]
    rows = []
    for mode in modes:
        for f in cfg.trim_f:
            try:
                if pre.clai is not None:
                    row = _clai_row(source, spec, pre, a, r, mode, f, cfg)
                else:
                    row = _banded_row(source, spec, pre, a, r, mode, f, cfg)
            except Exception as exc:
                row = _error_row(source, spec, mode, f, a.n, exc)
            rows.append(row)
    return rows


def _banded_row(source, spec, pre, a, r, mode, f, cfg) -> dict:
    p = pre.p
    full = banded_multiply(p, a)
    pa = drop_zero_diagonals(full)
    row = _blank(source, spec, mode, f, a.n)
    row.update(r_p=pre.r_p, diag_P=p.ndiag, diag_PA=full.ndiag, diag_PA_nonzero=count_nonzero_diagonals(full))
    b = np.ones(a.n)
    if mode == "classical":
        pa_f = filter_matrix(pa, f)
        enc0 = encode_banded(pa)
        enc = encode_banded(pa_f)
        enc.circuit = collapse_rotations(enc.circuit)
        spec_f = spectral_metrics(pa_f, cfg.spectral_tol)
        stats = trimming_metrics(pa, pa_f, b, enc0.circuit, enc.circuit, f)
        row.update(s=enc.subnorm)
    else:
        a_f, p_f = filter_matrix(a, f), filter_matrix(p, f)
        enc_a, enc_p = encode_banded(a_f), encode_precon(p_f)
        enc_a.circuit = collapse_rotations(enc_a.circuit)
        enc_p.circuit = collapse_rotations(enc_p.circuit)
        enc = multiply_encodings(enc_p, enc_a)
        enc0 = multiply_encodings(encode_precon(p), encode_banded(a))
        pa_f = banded_multiply(p_f, a_f)
        spec_f = spectral_metrics(pa_f, cfg.spectral_tol)
        stats = trimming_metrics(pa, pa_f, b, enc0.circuit, enc.circuit, f)
        row.update(s=enc.subnorm)
        row.update(_preamp(enc_a, enc_p, a_f, p_f, cfg))
    row.update(
        sigma_min=spec_f.sigma_min,
        kappa=spec_f.kappa,
        kappa_s=kappa_sub(row["s"], spec_f.sigma_min),
        rotations=stats.rotations_after,
        unique_angles=stats.unique_angles_after,
        rotations_before=stats.rotations_before,
        unique_angles_before=stats.unique_angles_before,
        l2_err=stats.l2_solution_error,
    )
    guard = min(cfg.emulate_max_qubits, max_qubits())
    if mode == "classical" and enc.circuit.num_qubits <= guard:
        block = extract_block(enc, guard=guard)
        # kappa_s = s / sigma_min(s * block) = 1 / sigma_min(block)
        row["kappa_s_emulated"] = 1.0 / float(np.linalg.svd(block, compute_uv=False)[-1])
        row["verify_err"] = float(np.max(np.abs(enc.subnorm * block - pa_f.to_dense())))
    return row


def _preamp(enc_a, enc_p, a_f, p_f, cfg) -> dict:
    alpha, beta = enc_a.subnorm, enc_p.subnorm
    gates_a, gates_p = enc_a.circuit.gate_count, enc_p.circuit.gate_count
    out = {"fom_plain": alpha * beta * (gates_a + gates_p), "fom_preamp": None}
    g1 = max_amplification(alpha, spectral_metrics(a_f, cfg.spectral_tol).sigma_max, cfg.delta)
    g2 = max_amplification(beta, spectral_metrics(p_f, cfg.spectral_tol).sigma_max, cfg.delta)
    if 1 <= g1 < alpha and 1 <= g2 < beta:
        fom = preamp_figure_of_merit(alpha, beta, g1, g2, cfg.delta, cfg.eps, gates_a, gates_p)
        out["fom_preamp"] = fom["fom_preamp"]
    return out


def _clai_row(source, spec, pre, a, r, mode, f, cfg) -> dict:
    row = _blank(source, spec, mode, f, a.n)
    a_f = filter_matrix(a, f)
    dense = clai_apply(pre.clai, a)
    dense_f = clai_apply(pre.clai, a_f) if f else dense
    sp_ = spectral_metrics(dense_f, cfg.spectral_tol)
    row.update(r_p=pre.r_p, sigma_min=sp_.sigma_min, kappa=sp_.kappa, diag_PA=2 * a.n - 1,
               diag_PA_nonzero=count_nonzero_diagonals(BandedMatrix.from_dense(dense_f)),
               l2_err=_dense_l2(dense, dense_f) if f else 0.0)
    if mode == "classical":
        # dense product: subnormalisation only, the circuit is not built
        row["s"] = _dense_subnorm(dense_f)
    else:
        enc_a = encode_banded(a_f)
        enc_a.circuit = collapse_rotations(enc_a.circuit)
        enc = encode_clai_product(pre.clai, enc_a)
        counts = enc.circuit.counts()
        row.update(s=enc.subnorm, rotations=counts["rotations"], unique_angles=counts["unique_angles"])
        row["fom_plain"] = enc.subnorm * (enc.info["gates_A"] + enc.info["gates_P"])
    row["kappa_s"] = kappa_sub(row["s"], sp_.sigma_min)
    return row


def _dense_l2(m: np.ndarray, m_f: np.ndarray) -> float:
    b = np.ones(m.shape[0])
    x = np.linalg.solve(m, b)
    x_f = np.linalg.solve(m_f, b)
    return float(np.linalg.norm(x_f / np.linalg.norm(x_f) - x / np.linalg.norm(x)))


def _work(args):
    source, spec, cfg = args
    return _combination_rows(source, spec, cfg)


def run_sweep(config: SweepConfig) -> SweepReport:
    """Run every (source, preconditioner, mode, f) combination in config order."""
    jobs = [(s, p, config) for s in config.sources for p in config.preconditioners]
    if config.parallelism > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.parallelism) as pool:
            chunks = list(pool.map(_work, jobs))
    else:
        chunks = [_work(j) for j in jobs]
    return SweepReport([row for chunk in chunks for row in chunk])


# ---------------------------------------------------------------------------
# output


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def report_csv(report: SweepReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ALL_COLUMNS)
    for row in report.rows:
        w.writerow([_fmt(row.get(c)) for c in ALL_COLUMNS])
    return buf.getvalue()


def _json_value(v):
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return None if not math.isfinite(v) else float(format(v, ".17g"))
    if isinstance(v, np.integer):
        return int(v)
    return v


def report_json_obj(report: SweepReport) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "columns": list(ALL_COLUMNS),
        "rows": [{c: _json_value(row.get(c)) for c in ALL_COLUMNS} for row in report.rows],
    }


def emit_report(report: SweepReport, csv_path=None, json_path=None) -> list[Path]:
    """Write the CSV (fixed column order) and its JSON mirror."""
    written = []
    if csv_path:
        p = Path(csv_path)
        p.write_text(report_csv(report))
        written.append(p)
    if json_path:
        p = Path(json_path)
        p.write_text(json.dumps(report_json_obj(report), indent=1) + "\n")
        written.append(p)
    return written


def read_report(path) -> SweepReport:
    """Load a report from its JSON mirror or CSV."""
    path = Path(path)
    if path.suffix == ".json":
        obj = json.loads(path.read_text())
        return SweepReport([dict(r) for r in obj["rows"]])
    with open(path, newline="") as fh:
        rows = []
        for rec in csv.DictReader(fh):
            rows.append({k: _parse_cell(v) for k, v in rec.items()})
        return SweepReport(rows)


def _parse_cell(v: str):
    if v == "":
        return None
    for conv in (int, float):
        try:
            return conv(v)
        except ValueError:
            pass
    return v
