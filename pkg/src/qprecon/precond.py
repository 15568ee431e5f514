"""Diagonal-scaling, SPAI, TPAI and CLAI preconditioners for banded matrices."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .matcore import (
    BandedMatrix,
    MatrixError,
    SingularMatrixError,
    banded_multiply,
    diagonal_scale,
)

RCOND_LIMIT = 1e-14
CLAI_DENSE_LIMIT = 4096


class PreconditionerError(MatrixError):
    pass


@dataclass(frozen=True)
class PreconditionerSpec:
    kind: str
    method: str = "column"
    infill: int = 0
    iterations: int = 10
    drop_on: str = "M"

    KINDS = ("DS", "SPAI", "TPAI", "CLAI")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise PreconditionerError(f"unknown preconditioner {self.kind!r}")
        if self.kind == "SPAI" and self.method not in ("column", "iterative"):
            raise PreconditionerError(f"unknown SPAI method {self.method!r}")
        if self.infill < 0:
            raise PreconditionerError("infill level must be >= 0")
        if self.kind in ("DS", "CLAI") and self.infill:
            raise PreconditionerError(f"{self.kind} has no infill")
        if self.iterations < 1:
            raise PreconditionerError("iterations must be >= 1")
        if self.drop_on not in ("M", "G"):
            raise PreconditionerError("drop_on must be 'M' or 'G'")

    @property
    def label(self) -> str:
        if self.kind == "SPAI":
            tag = "SPAI" if self.method == "column" else "SPAI-it"
            return f"{tag}({self.infill})"
        if self.kind == "TPAI":
            return f"TPAI({self.infill})"
        return self.kind

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind in ("SPAI", "TPAI"):
            d["infill"] = self.infill
        if self.kind == "SPAI":
            d["method"] = self.method
            if self.method == "iterative":
                d["iterations"] = self.iterations
                d["drop_on"] = self.drop_on
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PreconditionerSpec":
        known = {"kind", "method", "infill", "iterations", "drop_on"}
        extra = set(d) - known
        if extra:
            raise PreconditionerError(f"unknown preconditioner fields {sorted(extra)}")
        return cls(**d)


# ---------------------------------------------------------------------------
# stencil patterns


@dataclass(frozen=True)
class StencilPattern:
    """Lattice offsets (dx, dy[, dz]) that define the sparsity of one row."""

    offsets: frozenset

    @property
    def dim(self) -> int:
        return len(next(iter(self.offsets)))

    def __len__(self):
        return len(self.offsets)

    def matrix_offsets(self, dims) -> list[int]:
        """Banded-matrix offsets (row - col) for a mesh with the given dims."""
        strides = np.cumprod((1,) + tuple(dims[:-1]))
        return sorted({-int(np.dot(o, strides)) for o in self.offsets})

    def sum(self, other: "StencilPattern") -> "StencilPattern":
        return StencilPattern(frozenset(
            tuple(a + b for a, b in zip(p, q)) for p in self.offsets for q in other.offsets
        ))


def base_stencil(dim: int) -> StencilPattern:
    if dim not in (2, 3):
        raise PreconditionerError(f"no base stencil for dimension {dim}")
    pts = {(0,) * dim}
    for axis in range(dim):
        for s in (-1, 1):
            p = [0] * dim
            p[axis] = s
            pts.add(tuple(p))
    return StencilPattern(frozenset(pts))


def infill_pattern(base: StencilPattern, level: int) -> StencilPattern:
    """Grow a 5- or 7-point stencil by ``level`` rings (L1 diamond)."""
    if level < 0:
        raise PreconditionerError("infill level must be >= 0")
    if base != base_stencil(base.dim):
        raise PreconditionerError("infill patterns are defined for the 5/7-point stencil only")
    out = base
    for _ in range(level):
        out = out.sum(base)
    return out


def product_pattern(base: StencilPattern, level: int) -> tuple[StencilPattern, StencilPattern]:
    """Predicted (all, non-zero) stencil of ``P A`` for SPAI at ``level``.

    Lattice points of the P stencil other than the centre are exactly zero in
    ``PA`` because every reduced row system is solved exactly.
    """
    p = infill_pattern(base, level)
    pa = p.sum(base)
    centre = (0,) * base.dim
    nonzero = StencilPattern(frozenset((pa.offsets - p.offsets) | {centre}))
    return pa, nonzero


def table_counts(level: int) -> tuple[int, int, int]:
    """Closed-form 2D diagonal counts (P, PA, non-zero PA)."""
    i = level
    return 5 + 2 * i * (i + 3), 5 + 2 * (i + 1) * (i + 4), 9 + 4 * i


def structural_support(a: BandedMatrix, level: int) -> sp.csr_matrix:
    """Boolean sparsity of ``|A|^(level+1)``: rows give the SPAI support sets."""
    s = (abs(a.to_sparse("csr")) > 0).astype(np.int64)
    out = s.copy()
    for _ in range(level):
        out = (out @ s > 0).astype(np.int64)
    out.sort_indices()
    return out


# ---------------------------------------------------------------------------
# SPAI


def _row_sets(support: sp.csr_matrix):
    for j in range(support.shape[0]):
        yield j, support.indices[support.indptr[j] : support.indptr[j + 1]]


def _solve_reduced(block: np.ndarray, rhs: np.ndarray, j: int, trans: bool) -> np.ndarray:
    try:
        lu, piv = sla.lu_factor(block, check_finite=False)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise SingularMatrixError(f"reduced SPAI system {j} could not be factorised") from exc
    # reciprocal condition estimate of the reduced block
    with np.errstate(divide="ignore"):
        rcond = 1.0 / (np.linalg.norm(block, 1) * np.linalg.norm(
            sla.lu_solve((lu, piv), np.eye(block.shape[0]), check_finite=False), 1))
    if not np.isfinite(rcond) or rcond < RCOND_LIMIT:
        raise SingularMatrixError(f"reduced SPAI system {j} is singular (rcond={rcond:.2e})")
    return sla.lu_solve((lu, piv), rhs, trans=1 if trans else 0, check_finite=False)


def spai_column(
    a: BandedMatrix,
    infill: int = 0,
    side: str = "left",
    support: sp.csr_matrix | None = None,
) -> BandedMatrix:
    """Sparse approximate inverse by exact reduced solves.

    For ``side="left"`` row ``j`` of ``P`` lives on the support ``S_j`` of
    row ``j`` of ``|A|^(infill+1)`` and solves ``m A[S_j, S_j] = e_j`` exactly.
    ``side="right"`` solves the column systems ``A[S_j, S_j] m = e_j``
    instead, giving a right preconditioner.
    """
    if side not in ("left", "right"):
        raise PreconditionerError(f"side must be 'left' or 'right', got {side!r}")
    if support is None:
        support = structural_support(a, infill)
    asp = a.to_sparse("csr")
    n = a.n
    rows_out, cols_out, vals_out = [], [], []
    for j, idx in _row_sets(support):
        pos = np.searchsorted(idx, j)
        if pos >= idx.size or idx[pos] != j:
            raise SingularMatrixError(f"support of row {j} misses the diagonal")
        block = asp[idx][:, idx].toarray()
        e = np.zeros(idx.size)
        e[pos] = 1.0
        # left: m^T solves block^T m = e; right: block m = e
        m = _solve_reduced(block, e, j, trans=(side == "left"))
        if side == "left":
            rows_out.append(np.full(idx.size, j))
            cols_out.append(idx)
        else:
            rows_out.append(idx)
            cols_out.append(np.full(idx.size, j))
        vals_out.append(m)
    coo = sp.coo_matrix(
        (np.concatenate(vals_out), (np.concatenate(rows_out), np.concatenate(cols_out))),
        shape=(n, n),
    )
    p = BandedMatrix.from_sparse(coo)
    # keep every offset the pattern allows, even where the solve produced 0
    pat = BandedMatrix.from_sparse(sp.coo_matrix(support if side == "left" else support.T))
    diags = {k: p.diagonals.get(k, np.zeros(n - abs(k))) for k in pat.offsets}
    return BandedMatrix(n, diags, {"preconditioner": f"SPAI({infill})"})


def _restrict(m: BandedMatrix, offsets: Iterable[int], mask: dict[int, np.ndarray] | None):
    out = {}
    for k in offsets:
        v = m.diagonals.get(k)
        if v is None:
            v = np.zeros(m.n - abs(k))
        out[k] = v * mask[k] if mask is not None else v
    return BandedMatrix(m.n, out)


def _frob_inner(x: BandedMatrix, y: BandedMatrix) -> float:
    return sum(float(v @ y.diagonals[k]) for k, v in x.diagonals.items() if k in y.diagonals)


@dataclass
class SpaiIterationLog:
    residuals: list[float] = field(default_factory=list)
    alphas: list[float] = field(default_factory=list)
    stop_reason: str = ""


def spai_iterative(
    a: BandedMatrix,
    pattern: BandedMatrix | None = None,
    k_max: int = 10,
    drop_on: str = "M",
    log: SpaiIterationLog | None = None,
) -> BandedMatrix:
    """Global minimal-residual descent for ``min ||I - A M||_F``.

    Starts from ``M0 = a0 A^T`` with ``a0 = ||A||_F / ||A A^T||_F``.  Entries
    outside ``pattern`` (a matrix whose non-zeros mark allowed positions) are
    dropped from ``M`` after each update (``drop_on="M"``) or from the search
    direction before the step length is chosen (``drop_on="G"``).
    ``pattern=None`` disables dropping.  With ``drop_on="M"`` a step that
    would raise the residual is rejected and the iteration stops.
    """
    if k_max < 1:
        raise PreconditionerError("k_max must be >= 1")
    if drop_on not in ("M", "G"):
        raise PreconditionerError("drop_on must be 'M' or 'G'")
    log = log if log is not None else SpaiIterationLog()
    n = a.n
    eye = BandedMatrix.identity(n)
    at = a.transpose()
    alpha0 = a.frobenius() / banded_multiply(a, at).frobenius()
    m = at.scaled(alpha0)
    mask = None
    if pattern is not None:
        mask = {k: (np.abs(v) > 0).astype(float) for k, v in pattern.diagonals.items()}
        m = _restrict(m, pattern.offsets, mask)

    def residual(mm):
        return (eye - banded_multiply(a, mm)).frobenius()

    res = residual(m)
    log.residuals.append(res)
    for _ in range(k_max):
        g = eye - banded_multiply(a, m)
        if mask is not None and drop_on == "G":
            g_dir = _restrict(g, pattern.offsets, mask)
        else:
            g_dir = g
        ag = banded_multiply(a, g_dir)
        denom = _frob_inner(ag, ag)
        if denom == 0.0:
            log.stop_reason = "stationary"
            break
        alpha = _frob_inner(g, ag) / denom
        m_new = m + g_dir.scaled(alpha)
        if mask is not None and drop_on == "M":
            m_new = _restrict(m_new, pattern.offsets, mask)
        res_new = residual(m_new)
        if res_new > res:
            log.stop_reason = "residual increased"
            break
        m, res = m_new, res_new
        log.alphas.append(alpha)
        log.residuals.append(res)
    else:
        log.stop_reason = "k_max"
    return BandedMatrix(n, dict(m.diagonals), {"preconditioner": "SPAI-it"})


# ---------------------------------------------------------------------------
# TPAI


def toeplitz_average(a: BandedMatrix) -> dict[int, float]:
    """Arithmetic mean of each stored diagonal."""
    return {k: float(np.mean(v)) for k, v in a.diagonals.items()}


def tpai_offsets(base: Iterable[int], level: int, n: int | None = None) -> list[int]:
    """Grow an offset set by adding neighbours (offset +/- 1) ``level`` times."""
    offs = set(base)
    for _ in range(level):
        offs |= {k + 1 for k in offs} | {k - 1 for k in offs}
    if n is not None:
        offs = {k for k in offs if abs(k) < n}
    return sorted(offs)


def tpai_solve(t: dict[int, float], p_offsets: Iterable[int]) -> dict[int, float]:
    """Coefficients of an infinite Toeplitz ``P`` with ``(P T)_k = delta_k0`` on its own offsets.

    Row system: ``sum_q p_q t_(k - q) = delta_k0`` for every ``k`` in
    ``p_offsets``, solved by LU.
    """
    p_offsets = sorted(p_offsets)
    if 0 not in p_offsets:
        raise PreconditionerError("TPAI pattern must contain the main diagonal")
    s = len(p_offsets)
    # row-vector form p @ B = e with B[q, k] = t_(k - q)
    b = np.array([[t.get(k - q, 0.0) for k in p_offsets] for q in p_offsets])
    e = np.zeros(s)
    e[p_offsets.index(0)] = 1.0
    p = _solve_reduced(b, e, 0, trans=True)
    return dict(zip(p_offsets, (float(x) for x in p)))


def tpai_tridiagonal(a: float, b: float, c: float) -> tuple[float, float, float]:
    """Closed-form tridiagonal TPAI for sub ``a``, main ``b``, super ``c``."""
    bi = b / (b * b - 2 * a * c)
    return -a * bi / b, bi, -c * bi / b


def tpai_pentadiagonal(a: float, b: float, c: float) -> tuple[float, ...]:
    """Closed-form pentadiagonal TPAI of a tridiagonal (sub ``a``, main ``b``, super ``c``).

    Returned in row order: offsets +2, +1, 0, -1, -2.
    """
    d = b**5 - 4 * a * b**3 * c + 3 * a * a * b * c * c
    return (
        (a * a * b * b - a**3 * c) / d,
        (-a * b**3 + a * a * b * c) / d,
        (b**4 - 2 * a * b * b * c + a * a * c * c) / d,
        (-(b**3) * c + a * b * c * c) / d,
        (b * b * c * c - a * c**3) / d,
    )


def tpai(a: BandedMatrix, infill: int = 0) -> BandedMatrix:
    """Toeplitz approximate inverse of a diagonally scaled matrix."""
    d0 = a.diagonals.get(0)
    if d0 is None or not np.allclose(d0, 1.0, rtol=0, atol=1e-12):
        raise PreconditionerError("TPAI expects a diagonally scaled matrix (unit main diagonal)")
    t = toeplitz_average(a)
    offs = tpai_offsets(t, infill, a.n)
    coeffs = tpai_solve(t, offs)
    p = BandedMatrix.toeplitz(coeffs, a.n)
    p.meta["preconditioner"] = f"TPAI({infill})"
    p.meta["toeplitz"] = coeffs
    return p


# ---------------------------------------------------------------------------
# CLAI


@dataclass(frozen=True, eq=False)
class CirculantSpectrum:
    """Eigenvalues of the circulant approximation, ``omega = exp(-2 pi i / n)``."""

    lam: np.ndarray

    @property
    def n(self) -> int:
        return self.lam.size

    @property
    def lambda_min(self) -> float:
        return float(np.min(np.abs(self.lam)))

    def inverse(self) -> np.ndarray:
        if self.lambda_min <= 1e-14 * float(np.max(np.abs(self.lam))):
            raise SingularMatrixError("circulant approximation has a zero eigenvalue")
        return 1.0 / self.lam


def wrapped_diagonal_sums(a: BandedMatrix) -> np.ndarray:
    """``c[m] = sum of A[p, q]`` over ``(p - q) mod n == m``."""
    c = np.zeros(a.n)
    for k, v in a.diagonals.items():
        c[k % a.n] += float(np.sum(v))
    return c


def clai_spectrum(a: BandedMatrix) -> CirculantSpectrum:
    lam = np.fft.fft(wrapped_diagonal_sums(a)) / a.n
    return CirculantSpectrum(lam)


def clai_spectrum_direct(a) -> np.ndarray:
    """Double-sum ``(1/n) sum_pq omega^((p-q)k) A_pq``; O(n^2) per eigenvalue."""
    dense = a.to_dense() if isinstance(a, BandedMatrix) else np.asarray(a, dtype=float)
    n = dense.shape[0]
    p, q = np.nonzero(dense)
    vals = dense[p, q]
    k = np.arange(n)[:, None]
    omega = np.exp(-2j * np.pi / n)
    return (omega ** (((p - q)[None, :] * k) % n) * vals[None, :]).sum(axis=1) / n


def circulant_matrix(spec: CirculantSpectrum) -> np.ndarray:
    """Dense ``C = F^dagger diag(lam) F``; real for conjugate-symmetric spectra."""
    col = np.fft.ifft(spec.lam)
    n = spec.n
    idx = (np.arange(n)[:, None] - np.arange(n)[None, :]) % n
    return _realify(col[idx])


def circulant_inverse_apply(spec: CirculantSpectrum, x) -> np.ndarray:
    """``C^-1 x`` for a vector or column-stacked matrix ``x``."""
    inv = spec.inverse()
    x = np.asarray(x)
    if x.ndim == 1:
        return np.fft.ifft(inv * np.fft.fft(x))
    return np.fft.ifft(inv[:, None] * np.fft.fft(x, axis=0), axis=0)


def clai_apply(spec: CirculantSpectrum, a) -> np.ndarray:
    """Dense ``C^-1 A`` for classical baselines (n <= 4096)."""
    dense = a.to_dense() if isinstance(a, BandedMatrix) else np.asarray(a, dtype=float)
    if dense.shape[0] != spec.n:
        raise MatrixError("spectrum and matrix dimensions differ")
    if spec.n > CLAI_DENSE_LIMIT:
        raise PreconditionerError(f"dense CLAI products are limited to n <= {CLAI_DENSE_LIMIT}")
    return _realify(circulant_inverse_apply(spec, dense))


def _realify(x: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    scale = max(1.0, float(np.max(np.abs(x))) if x.size else 1.0)
    if np.max(np.abs(x.imag), initial=0.0) > tol * scale:
        return x
    return np.ascontiguousarray(x.real)


# ---------------------------------------------------------------------------
# dispatch


@dataclass
class Preconditioned:
    """A scaled system and its preconditioner."""

    spec: PreconditionerSpec
    a: BandedMatrix  # D^-1 A
    d: BandedMatrix
    p: BandedMatrix | None  # None for CLAI
    clai: CirculantSpectrum | None = None

    @property
    def r_p(self) -> float:
        if self.clai is not None:
            return 1.0 / self.clai.lambda_min
        return self.p.max_abs()

    def product(self) -> BandedMatrix:
        if self.p is None:
            raise PreconditionerError("CLAI products are dense; use clai_apply")
        return banded_multiply(self.p, self.a)


def build_preconditioner(spec: PreconditionerSpec, a_raw: BandedMatrix) -> Preconditioned:
    """Diagonally scale ``a_raw`` and build ``P`` for the scaled matrix."""
    a, d = diagonal_scale(a_raw)
    if spec.kind == "DS":
        p = BandedMatrix.identity(a.n)
        return Preconditioned(spec, a, d, p)
    if spec.kind == "SPAI":
        if spec.method == "column":
            p = spai_column(a, spec.infill)
        else:
            support = structural_support(a, spec.infill)
            pattern = BandedMatrix.from_sparse(support.astype(float))
            p = spai_iterative(a, pattern, spec.iterations, spec.drop_on)
        return Preconditioned(spec, a, d, p)
    if spec.kind == "TPAI":
        return Preconditioned(spec, a, d, tpai(a, spec.infill))
    return Preconditioned(spec, a, d, None, clai_spectrum(a))


def count_nonzero_diagonals(m: BandedMatrix, rel_tol: float = 1e-12) -> int:
    tol = rel_tol * m.max_abs()
    return sum(1 for v in m.diagonals.values() if v.size and np.max(np.abs(v)) > tol)


def reference_solution(a: BandedMatrix, b) -> np.ndarray:
    x = spla.spsolve(a.to_sparse("csc"), np.asarray(b, dtype=float))
    if not np.all(np.isfinite(x)):
        raise SingularMatrixError("singular system")
    return x
