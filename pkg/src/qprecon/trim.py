"""Value binning of matrix diagonals and Hamming-1 collapse of equal-angle rotations."""
from __future__ import annotations

import heapq
import math
import warnings
from collections import defaultdict
from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from .circuit import CircuitIR, MultiplexedRy
from .matcore import BandedMatrix, SingularMatrixError

ANGLE_TOL = 1e-12


@dataclass(frozen=True)
class Bin:
    lo: float
    hi: float
    mid: float
    members: tuple[int, ...]


def _window_ends(vals: np.ndarray, prefix: tuple, f: float) -> np.ndarray:
    """Maximal window end for every start of sorted positive ``vals``.

    A window ``[i, j]`` qualifies when ``vals[j] - vals[i] <= f * mean``, the
    mean being taken over entries (with multiplicity).  The end is grown one
    value at a time and never moves backwards as the start advances.
    """
    m = vals.size
    ends = np.empty(m, dtype=np.int64)
    sums, cnts = prefix
    j = 0
    for i in range(m):
        j = max(j, i)
        while j + 1 < m:
            mean = (sums[j + 2] - sums[i]) / (cnts[j + 2] - cnts[i])
            if vals[j + 1] - vals[i] <= f * mean:
                j += 1
            else:
                break
        ends[i] = j
    return ends


def _bin_same_sign(vals: np.ndarray, counts: np.ndarray, f: float) -> list[tuple[int, int]]:
    """Greedy non-overlapping windows covering every distinct value.

    Repeatedly takes the window with the most entries (lowest start on ties).
    Choosing ``[i, j]`` retires starts ``i..j`` and truncates live windows that
    reached into it; heap entries are refreshed lazily.
    """
    m = vals.size
    prefix = (
        np.concatenate([[0.0], np.cumsum(vals * counts)]),
        np.concatenate([[0], np.cumsum(counts)]),
    )
    cnts = prefix[1]
    if f == 0:
        return [(i, i) for i in range(m)]
    ends = _window_ends(vals, prefix, f)
    cap = np.full(m, m - 1, dtype=np.int64)
    alive = np.ones(m, dtype=bool)

    def entry(i):
        j = int(min(ends[i], cap[i]))
        return (-int(cnts[j + 1] - cnts[i]), i, j)

    heap = [entry(i) for i in range(m)]
    heapq.heapify(heap)
    chosen = []
    while heap:
        _, i, j = heapq.heappop(heap)
        if not alive[i] or j != min(ends[i], cap[i]):
            continue
        chosen.append((i, j))
        alive[i:j + 1] = False
        t = i - 1
        while t >= 0 and alive[t] and min(ends[t], cap[t]) >= i:
            cap[t] = i - 1
            heapq.heappush(heap, entry(t))
            t -= 1
    return sorted(chosen)


def bin_values(values, f: float) -> list[Bin]:
    """Two-pass binning of ``values``.

    Pass one scans the sorted distinct values for maximal windows whose spread
    is at most ``f`` times the window mean; pass two keeps the window with the
    most entries, discards everything overlapping it and repeats on what is
    left.  Positive and negative values are binned separately and zeros are
    left alone, so a bin never spans zero.  Every non-zero entry ends up in
    exactly one bin.
    """
    if f < 0:
        raise ValueError("f must be >= 0")
    values = np.asarray(values, dtype=float)
    bins: list[Bin] = []
    for sign in (-1.0, 1.0):
        sel = np.flatnonzero(values * sign > 0)
        if sel.size == 0:
            continue
        mags, inverse, counts = np.unique(values[sel] * sign, return_inverse=True, return_counts=True)
        order = sel[np.argsort(inverse, kind="stable")]
        starts = np.concatenate([[0], np.cumsum(counts)])
        for i, j in _bin_same_sign(mags, counts, f):
            members = tuple(sorted(order[starts[i]:starts[j + 1]].tolist()))
            lo, hi = sorted((float(mags[i]) * sign, float(mags[j]) * sign))
            bins.append(Bin(lo, hi, 0.5 * (lo + hi), members))
    bins.sort(key=lambda b: b.lo)
    return bins


def apply_bins(values, bins: list[Bin]) -> np.ndarray:
    out = np.array(values, dtype=float)
    for b in bins:
        out[list(b.members)] = b.mid
    return out


def filter_matrix(m: BandedMatrix, f: float) -> BandedMatrix:
    """Bin the entries of each stored diagonal independently."""
    if f < 0:
        raise ValueError("f must be >= 0")
    out = {k: apply_bins(v, bin_values(v, f)) for k, v in m.diagonals.items()}
    meta = dict(m.meta)
    meta["filter_f"] = f
    return BandedMatrix(m.n, out, meta)


# ---------------------------------------------------------------------------
# Hamming-1 collapse


def _pattern(g: MultiplexedRy, qubits: tuple[int, ...]) -> tuple[int, int]:
    """(value, care-mask) over ``qubits`` (bit i <-> qubits[i])."""
    lookup = {qb: (bit, care) for qb, bit, care in g.controls}
    val = care_mask = 0
    for i, qb in enumerate(qubits):
        bit, care = lookup[qb]
        if care:
            care_mask |= 1 << i
            val |= bit << i
    return val, care_mask


def collapse_patterns(patterns: set[tuple[int, int]], width: int) -> set[tuple[int, int]]:
    """Merge pairs of patterns that differ in one cared bit.

    Sweeps bit levels from the least significant (tree leaves) to the most
    significant (root) and repeats until nothing merges.  Each pattern joins
    at most one merge per level, so the covered set is unchanged and stays a
    disjoint union.
    """
    current = set(patterns)
    changed = True
    while changed:
        changed = False
        for bit in range(width):
            flag = 1 << bit
            nxt = set()
            used = set()
            for val, mask in sorted(current):
                if (val, mask) in used:
                    continue
                if mask & flag and not val & flag:
                    partner = (val | flag, mask)
                    if partner in current and partner not in used:
                        used.add((val, mask))
                        used.add(partner)
                        nxt.add((val, mask & ~flag))
                        changed = True
                        continue
                if (val, mask) not in used:
                    nxt.add((val, mask))
            current = nxt
    return current


def collapse_rotations(circuit: CircuitIR, angle_tol: float = ANGLE_TOL) -> CircuitIR:
    """Coalesce equal-angle rotations of the same diagonal whose controls differ in one bit.

    Each maximal run of consecutive rotations on one target is rewritten in
    canonical order (diagonal, then pattern); other gates keep their place.
    """
    gates = circuit.gates
    out = []
    i = 0
    while i < len(gates):
        g = gates[i]
        if not isinstance(g, MultiplexedRy):
            out.append(g)
            i += 1
            continue
        j = i
        while j < len(gates) and isinstance(gates[j], MultiplexedRy) and gates[j].target == g.target:
            j += 1
        out.extend(_collapse_run(gates[i:j], angle_tol))
        i = j
    return CircuitIR(circuit.num_qubits, dict(circuit.registers), out)


def _collapse_run(run: list[MultiplexedRy], angle_tol: float) -> list[MultiplexedRy]:
    groups: dict[tuple, list[MultiplexedRy]] = defaultdict(list)
    for g in run:
        if g.angle == 0.0:
            continue
        qubits = tuple(sorted(c[0] for c in g.controls))
        groups[(g.diagonal, qubits)].append(g)
    out = []
    for (diag, qubits), members in sorted(groups.items(), key=lambda kv: (_diag_key(kv[0][0]), kv[0][1])):
        target = members[0].target
        # cluster angles; post-binning angles are bitwise equal so the tolerance only absorbs noise
        members = sorted(members, key=lambda g: g.angle)
        clusters, cur = [], [members[0]]
        for g in members[1:]:
            if abs(g.angle - cur[0].angle) <= angle_tol:
                cur.append(g)
            else:
                clusters.append(cur)
                cur = [g]
        clusters.append(cur)
        for cluster in clusters:
            angle = cluster[0].angle
            pats = {_pattern(g, qubits) for g in cluster}
            if len(pats) != len(cluster):
                out.extend(cluster)  # duplicate patterns: leave as is
                continue
            for val, mask in sorted(collapse_patterns(pats, len(qubits))):
                controls = tuple(
                    (qb, (val >> k) & 1, bool(mask >> k & 1)) for k, qb in enumerate(qubits)
                )
                out.append(MultiplexedRy(target, controls, angle, diag))
    out.sort(key=lambda g: (_diag_key(g.diagonal), _sort_pattern(g)))
    return out


def _diag_key(d):
    return (d is None, d if d is not None else 0)


def _sort_pattern(g: MultiplexedRy):
    return tuple((qb, care, bit) for qb, bit, care in sorted(g.controls, reverse=True))


# ---------------------------------------------------------------------------


@dataclass
class TrimStats:
    f: float
    unique_angles_before: int
    unique_angles_after: int
    rotations_before: int
    rotations_after: int
    l2_solution_error: float

    @property
    def rotation_ratio(self) -> float:
        return self.rotations_after / self.rotations_before if self.rotations_before else 1.0

    @property
    def angle_ratio(self) -> float:
        return self.unique_angles_after / self.unique_angles_before if self.unique_angles_before else 1.0


def unit_solution(a: BandedMatrix, b) -> np.ndarray:
    with np.errstate(all="ignore"), warnings.catch_warnings():
        warnings.simplefilter("error", spla.MatrixRankWarning)
        try:
            x = spla.spsolve(a.to_sparse("csc"), np.asarray(b, dtype=float))
        except (RuntimeError, spla.MatrixRankWarning) as exc:
            raise SingularMatrixError(f"singular solve: {exc}") from exc
    nrm = float(np.linalg.norm(x))
    if not np.all(np.isfinite(x)) or nrm == 0.0:
        raise SingularMatrixError("singular solve")
    return x / nrm


def trimming_metrics(a: BandedMatrix, a_f: BandedMatrix, b, circuit_before: CircuitIR,
                     circuit_after: CircuitIR, f: float = math.nan) -> TrimStats:
    x = unit_solution(a, b)
    x_f = unit_solution(a_f, b)
    cb, ca = circuit_before.counts(), circuit_after.counts()
    return TrimStats(
        f=f,
        unique_angles_before=cb["unique_angles"],
        unique_angles_after=ca["unique_angles"],
        rotations_before=cb["rotations"],
        rotations_after=ca["rotations"],
        l2_solution_error=float(np.linalg.norm(x_f - x)),
    )
