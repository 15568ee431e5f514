"""Banded sparse matrices stored by diagonal.

A :class:`BandedMatrix` keeps one value vector per stored diagonal.  The
offset of entry ``A[row, col]`` is ``row - col``: negative offsets are
super-diagonals, positive offsets sub-diagonals.  The vector for offset ``k``
has length ``n - |k|`` and is indexed by column, starting at the first column
that has an entry on that diagonal (column ``max(0, -k)``).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
import scipy.io
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class MatrixError(ValueError):
    """Invalid matrix input or an operation that is undefined for it."""


class SingularMatrixError(MatrixError):
    pass


class MatrixMarketError(MatrixError):
    pass


def is_power_of_two(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@dataclass(frozen=True, eq=False)
class BandedMatrix:
    n: int
    diagonals: Mapping[int, np.ndarray]
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.n < 1:
            raise MatrixError(f"dimension must be positive, got {self.n}")
        clean = {}
        for k in sorted(self.diagonals):
            k_int = int(k)
            v = np.array(self.diagonals[k], dtype=float)
            if abs(k_int) >= self.n:
                raise MatrixError(f"offset {k_int} out of range for n={self.n}")
            if v.shape != (self.n - abs(k_int),):
                raise MatrixError(
                    f"diagonal {k_int} has length {v.size}, expected {self.n - abs(k_int)}"
                )
            v.setflags(write=False)
            clean[k_int] = v
        object.__setattr__(self, "diagonals", clean)

    # construction ---------------------------------------------------------

    @classmethod
    def from_dense(cls, a, keep_zero: bool = False) -> "BandedMatrix":
        a = np.asarray(a, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise MatrixError(f"expected a square matrix, got shape {a.shape}")
        n = a.shape[0]
        diags = {}
        for k in range(-(n - 1), n):
            # np.diagonal offset is col - row
            v = np.diagonal(a, offset=-k)
            if keep_zero or np.any(v != 0.0):
                diags[k] = v.copy()
        return cls(n, diags)

    @classmethod
    def from_sparse(cls, m) -> "BandedMatrix":
        m = sp.coo_matrix(m)
        if m.shape[0] != m.shape[1]:
            raise MatrixError(f"expected a square matrix, got shape {m.shape}")
        n = m.shape[0]
        m.sum_duplicates()
        diags: dict[int, np.ndarray] = {}
        offsets = m.row - m.col
        for k in np.unique(offsets):
            k = int(k)
            sel = offsets == k
            v = np.zeros(n - abs(k))
            v[m.col[sel] - max(0, -k)] = m.data[sel]
            diags[k] = v
        return cls(n, diags)

    @classmethod
    def identity(cls, n: int) -> "BandedMatrix":
        return cls(n, {0: np.ones(n)})

    @classmethod
    def diag(cls, values) -> "BandedMatrix":
        values = np.asarray(values, dtype=float)
        return cls(values.size, {0: values})

    @classmethod
    def toeplitz(cls, coeffs: Mapping[int, float], n: int) -> "BandedMatrix":
        return cls(n, {k: np.full(n - abs(k), float(c)) for k, c in coeffs.items()})

    # views ----------------------------------------------------------------

    @property
    def offsets(self) -> list[int]:
        return list(self.diagonals)

    @property
    def ndiag(self) -> int:
        return len(self.diagonals)

    def full_diagonal(self, k: int) -> np.ndarray:
        """Length-n column-indexed vector of offset ``k``; zero where out of range."""
        out = np.zeros(self.n)
        v = self.diagonals.get(k)
        if v is not None:
            start = max(0, -k)
            out[start : start + v.size] = v
        return out

    def to_dense(self) -> np.ndarray:
        a = np.zeros((self.n, self.n))
        for k, v in self.diagonals.items():
            cols = np.arange(max(0, -k), max(0, -k) + v.size)
            a[cols + k, cols] = v
        return a

    def to_sparse(self, fmt: str = "csr"):
        rows, cols, vals = [], [], []
        for k, v in self.diagonals.items():
            c = np.arange(max(0, -k), max(0, -k) + v.size)
            rows.append(c + k)
            cols.append(c)
            vals.append(v)
        if not vals:
            return sp.csr_matrix((self.n, self.n)).asformat(fmt)
        m = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.n, self.n),
        )
        return m.asformat(fmt)

    def max_abs(self) -> float:
        return max((float(np.max(np.abs(v))) for v in self.diagonals.values() if v.size), default=0.0)

    def matvec(self, x) -> np.ndarray:
        x = np.asarray(x)
        y = np.zeros(self.n, dtype=np.result_type(x, float))
        for k, v in self.diagonals.items():
            start = max(0, -k)
            cols = slice(start, start + v.size)
            y[start + k : start + k + v.size] += v * x[cols]
        return y

    def transpose(self) -> "BandedMatrix":
        # entry (r, c) on offset k moves to offset -k; column-order vectors keep their order
        return BandedMatrix(self.n, {-k: v for k, v in self.diagonals.items()})

    def scaled(self, factor: float) -> "BandedMatrix":
        return BandedMatrix(self.n, {k: v * factor for k, v in self.diagonals.items()}, dict(self.meta))

    def same_as(self, other: "BandedMatrix") -> bool:
        """Exact equality of dimension and diagonal map."""
        if self.n != other.n or self.offsets != other.offsets:
            return False
        return all(np.array_equal(v, other.diagonals[k]) for k, v in self.diagonals.items())

    def __add__(self, other: "BandedMatrix") -> "BandedMatrix":
        _check_same_n(self, other)
        diags = {k: v.copy() for k, v in self.diagonals.items()}
        for k, v in other.diagonals.items():
            diags[k] = diags[k] + v if k in diags else v.copy()
        return BandedMatrix(self.n, diags)

    def __sub__(self, other: "BandedMatrix") -> "BandedMatrix":
        return self + other.scaled(-1.0)

    def frobenius(self) -> float:
        return math.sqrt(sum(float(v @ v) for v in self.diagonals.values()))

    # serialisation ----------------------------------------------------------

    def to_json_obj(self) -> dict:
        return {
            "n": self.n,
            "diagonals": [
                {"offset": k, "values": [float(x) for x in v]} for k, v in self.diagonals.items()
            ],
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "BandedMatrix":
        try:
            return cls(int(obj["n"]), {int(d["offset"]): d["values"] for d in obj["diagonals"]})
        except (KeyError, TypeError) as exc:
            raise MatrixError(f"malformed banded-matrix JSON: {exc}") from exc


def _check_same_n(a: BandedMatrix, b: BandedMatrix):
    if a.n != b.n:
        raise MatrixError(f"dimension mismatch: {a.n} vs {b.n}")


def write_json(m: BandedMatrix, path) -> None:
    Path(path).write_text(json.dumps(m.to_json_obj()))


def read_json(path) -> BandedMatrix:
    return BandedMatrix.from_json_obj(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# test matrices


@dataclass(frozen=True)
class MatrixSource:
    """Where a system matrix comes from.

    ``jitter`` > 0 multiplies every face coefficient of a generated stencil by
    ``1 + jitter * u`` with ``u`` uniform in [-1, 1] (seeded), giving a
    non-uniform, CFD-like matrix that keeps the row-sum structure.
    """

    kind: str
    dims: tuple[int, ...] = ()
    path: str | None = None
    jitter: float = 0.0
    seed: int = 0

    KINDS = ("generated-2d-pressure", "generated-3d-laplacian", "matrix-market-file")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise MatrixError(f"unknown matrix source kind {self.kind!r}")
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        if self.kind == "matrix-market-file":
            if not self.path:
                raise MatrixError("matrix-market-file source needs a path")
        else:
            want = 2 if self.kind == "generated-2d-pressure" else 3
            if len(self.dims) != want:
                raise MatrixError(f"{self.kind} needs {want} mesh dimensions, got {self.dims}")
            if any(d < 2 for d in self.dims):
                raise MatrixError(f"mesh dimensions must all be >= 2, got {self.dims}")
        if self.jitter < 0 or self.jitter >= 1:
            raise MatrixError("jitter must lie in [0, 1)")

    @property
    def label(self) -> str:
        if self.kind == "matrix-market-file":
            return Path(self.path).stem
        tag = "2d" if self.kind == "generated-2d-pressure" else "3d"
        name = f"{tag}-{'x'.join(map(str, self.dims))}"
        return name + (f"-j{self.jitter:g}s{self.seed}" if self.jitter else "")


def stencil_matrix(dims, jitter: float = 0.0, seed: int = 0) -> BandedMatrix:
    """Mass-conservation stencil matrix on a structured mesh.

    Cell ``(i0, i1, ...)`` has index ``i0 + d0*i1 + d0*d1*i2``.  Each face
    between neighbouring cells contributes ``-w`` to both off-diagonal
    positions and ``+w`` to both diagonals (``w = 1`` without jitter).  Cell 0
    gets ``+1`` on its diagonal as the reference closure.
    """
    dims = tuple(int(d) for d in dims)
    n = math.prod(dims)
    rng = np.random.default_rng(seed)
    main = np.zeros(n)
    diags: dict[int, np.ndarray] = {}
    idx = np.arange(n).reshape(dims[::-1])  # axis 0 of dims varies fastest
    stride = 1
    for axis, d in enumerate(dims):
        arr_axis = len(dims) - 1 - axis
        lo = np.take(idx, np.arange(d - 1), axis=arr_axis).ravel()
        hi = lo + stride
        w = np.ones(lo.size)
        if jitter:
            w = w * (1.0 + jitter * rng.uniform(-1.0, 1.0, lo.size))
        # row hi, col lo -> sub-diagonal (+stride); row lo, col hi -> super (-stride)
        sub = np.zeros(n - stride)
        sub[lo] = -w
        sup = np.zeros(n - stride)
        sup[lo] = -w  # column hi sits at position hi - stride = lo
        diags[stride] = sub
        diags[-stride] = sup
        np.add.at(main, lo, w)
        np.add.at(main, hi, w)
        stride *= d
    main[0] += 1.0
    diags[0] = main
    return BandedMatrix(n, diags)


def generate_test_matrix(source: MatrixSource) -> BandedMatrix:
    if source.kind == "matrix-market-file":
        return read_matrix_market(source.path)
    m = stencil_matrix(source.dims, source.jitter, source.seed)
    m.meta["source"] = source.label
    m.meta["dims"] = list(source.dims)
    if not is_power_of_two(m.n):
        m.meta["warning"] = f"n={m.n} is not a power of two; block encoding will reject it"
    return m


# ---------------------------------------------------------------------------
# Matrix Market


def read_matrix_market(path) -> BandedMatrix:
    path = Path(path)
    try:
        rows, cols, entries, fmt, field_, symm = scipy.io.mminfo(str(path))
    except (ValueError, OSError, IndexError) as exc:
        raise MatrixMarketError(f"{path}: malformed header ({exc})") from exc
    if fmt != "coordinate":
        raise MatrixMarketError(f"{path}: only coordinate format is supported, got {fmt}")
    if field_ not in ("real", "integer"):
        raise MatrixMarketError(f"{path}: field must be real, got {field_}")
    if symm not in ("general", "symmetric"):
        raise MatrixMarketError(f"{path}: symmetry must be general or symmetric, got {symm}")
    if rows != cols:
        raise MatrixMarketError(f"{path}: matrix is not square ({rows}x{cols})")
    _check_mm_indices(path, rows, cols)
    try:
        m = scipy.io.mmread(str(path), spmatrix=True)
    except (ValueError, IndexError) as exc:
        raise MatrixMarketError(f"{path}: {exc}") from exc
    out = BandedMatrix.from_sparse(m)
    out.meta["source"] = path.stem
    return out


def _check_mm_indices(path: Path, rows: int, cols: int):
    # scipy silently accepts some out-of-range entries; check explicitly
    with open(path) as fh:
        for line in fh:
            if line.startswith("%"):
                continue
            break  # size line
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts or parts[0].startswith("%"):
                continue
            if len(parts) < 3:
                raise MatrixMarketError(f"{path}: entry {lineno} has no value")
            i, j = int(parts[0]), int(parts[1])
            if not (1 <= i <= rows and 1 <= j <= cols):
                raise MatrixMarketError(f"{path}: entry {lineno} index ({i},{j}) out of range")


def write_matrix_market(m: BandedMatrix, path, comment: str = "") -> None:
    scipy.io.mmwrite(str(path), m.to_sparse("coo"), comment=comment, field="real", precision=17,
                     symmetry="general")


def write_matrix_market_array(a, path, comment: str = "") -> None:
    scipy.io.mmwrite(str(path), np.asarray(a), comment=comment, precision=17)


# ---------------------------------------------------------------------------
# scaling and products


def diagonal_scale(a: BandedMatrix) -> tuple[BandedMatrix, BandedMatrix]:
    """Row scaling by the inverse main diagonal; returns ``(D^-1 A, D)``."""
    d = a.diagonals.get(0)
    if d is None or np.any(d == 0.0):
        bad = np.arange(a.n) if d is None else np.flatnonzero(d == 0.0)
        raise MatrixError(f"zero main-diagonal entry at row {int(bad[0])}")
    out = {}
    for k, v in a.diagonals.items():
        start = max(0, -k)
        rows = np.arange(start, start + v.size) + k
        out[k] = v / d[rows]
    out[0] = np.ones(a.n)
    return BandedMatrix(a.n, out, dict(a.meta)), BandedMatrix.diag(d)


def max_norm_scale(a: BandedMatrix) -> tuple[BandedMatrix, float]:
    r = a.max_abs()
    if r == 0.0:
        raise MatrixError("cannot max-norm scale an all-zero matrix")
    return a.scaled(1.0 / r), r


def banded_multiply(p: BandedMatrix, a: BandedMatrix) -> BandedMatrix:
    """Exact product ``P @ A`` in O(n * d_P * d_A).

    Every in-range pairwise sum of offsets is stored, including diagonals that
    cancel to zero.
    """
    _check_same_n(p, a)
    n = p.n
    acc: dict[int, np.ndarray] = {}
    pfull = {k: p.full_diagonal(k) for k in p.offsets}
    for ka, va in a.diagonals.items():
        a_start = max(0, -ka)
        cols = np.arange(a_start, a_start + va.size)
        mids = cols + ka
        for kp, vp_full in pfull.items():
            k = kp + ka
            if abs(k) >= n:
                continue
            # P[m + kp, m] * A[m, col]; keep columns where row m + kp is in range
            rows = mids + kp
            ok = (rows >= 0) & (rows < n)
            if k not in acc:
                acc[k] = np.zeros(n)
            acc[k][cols[ok]] += vp_full[mids[ok]] * va[ok]
    diags = {k: full[max(0, -k) : max(0, -k) + n - abs(k)] for k, full in acc.items()}
    return BandedMatrix(n, diags)


def drop_zero_diagonals(m: BandedMatrix, tol: float | None = None) -> BandedMatrix:
    """Remove diagonals whose largest magnitude is ``<= tol``.

    ``tol`` defaults to ``1e-12 * max|entry|``.  The number removed is stored in
    ``meta["dropped_diagonals"]``.
    """
    if tol is None:
        tol = 1e-12 * m.max_abs()
    if tol < 0:
        raise MatrixError("tol must be non-negative")
    keep = {k: v for k, v in m.diagonals.items() if v.size and np.max(np.abs(v)) > tol}
    meta = dict(m.meta)
    meta["dropped_diagonals"] = m.ndiag - len(keep)
    return BandedMatrix(m.n, keep, meta)


# ---------------------------------------------------------------------------
# spectra


@dataclass(frozen=True)
class Spectrum:
    sigma_min: float
    sigma_max: float
    method: str
    tol: float

    @property
    def kappa(self) -> float:
        return self.sigma_max / self.sigma_min


DENSE_SVD_LIMIT = 1024


def spectral_metrics(m, tol: float = 1e-10, method: str = "auto", seed: int = 0) -> Spectrum:
    """Extreme singular values of ``m`` (BandedMatrix or dense array).

    ``direct`` uses a dense SVD.  ``iterative`` runs Lanczos on ``A^T A`` for
    the largest value and on ``(A^T A)^-1`` through a sparse LU for the
    smallest; the start vector is drawn from ``seed`` so results are
    reproducible.
    """
    if method == "auto":
        n = m.n if isinstance(m, BandedMatrix) else np.shape(m)[0]
        method = "direct" if n <= DENSE_SVD_LIMIT else "iterative"
    if method == "direct":
        a = m.to_dense() if isinstance(m, BandedMatrix) else np.asarray(m)
        s = np.linalg.svd(a, compute_uv=False)
        smax, smin = float(s[0]), float(s[-1])
    elif method == "iterative":
        smin, smax = _iterative_extremes(m, tol, seed)
    else:
        raise MatrixError(f"unknown spectral method {method!r}")
    if not np.isfinite(smin) or smin <= max(tol, np.finfo(float).eps * smax * 10):
        raise SingularMatrixError(f"matrix is numerically singular (sigma_min={smin:.3e})")
    return Spectrum(smin, smax, method, tol)


def _iterative_extremes(m, tol, seed):
    a = m.to_sparse("csc") if isinstance(m, BandedMatrix) else sp.csc_matrix(np.asarray(m))
    n = a.shape[0]
    v0 = np.random.default_rng(seed).standard_normal(n)
    at = a.T.tocsc()
    gram = spla.LinearOperator((n, n), matvec=lambda x: at @ (a @ x), dtype=float)
    try:
        lu = spla.splu(a)
    except RuntimeError as exc:
        raise SingularMatrixError(f"sparse LU failed: {exc}") from exc
    inv_gram = spla.LinearOperator(
        (n, n), matvec=lambda x: lu.solve(lu.solve(x, trans="T")), dtype=float
    )
    try:
        big = spla.eigsh(gram, k=1, which="LA", v0=v0, tol=tol * 1e-2, return_eigenvectors=False)
        small = spla.eigsh(inv_gram, k=1, which="LA", v0=v0, tol=tol * 1e-2,
                           return_eigenvectors=False)
    except spla.ArpackNoConvergence as exc:
        raise MatrixError(f"singular value iteration did not converge: {exc}") from exc
    return 1.0 / math.sqrt(float(small[0])), math.sqrt(float(big[0]))


def kappa_sub(s: float, sigma_min: float) -> float:
    """Subnormalised condition number ``s / sigma_min``."""
    if not s > 0 or not sigma_min > 0:
        raise MatrixError(f"kappa_sub needs positive inputs, got s={s}, sigma_min={sigma_min}")
    return s / sigma_min
