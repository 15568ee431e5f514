"""Statevector emulation of :class:`CircuitIR` and block extraction.

States are arrays of shape ``(2**q, batch)``, one column per input state, so
a whole batch of basis columns is pushed through the circuit at once.  Gates
are applied by index gathering; nothing of size ``2**q x 2**q`` is built.
"""
from __future__ import annotations

import json
import os
import time
from dataclasses import asdict, dataclass

import numpy as np

from .circuit import (
    CircuitIR,
    ControlledAdd,
    MultiplexedPhase,
    MultiplexedRy,
    PauliX,
    PrepLoad,
    QFTBlock,
)

DEFAULT_MAX_QUBITS = 24
GUARD_ENV = "QPRECON_MAX_QUBITS"
BATCH_BYTES = 1 << 27


class EmulationError(RuntimeError):
    pass


def max_qubits() -> int:
    raw = os.environ.get(GUARD_ENV)
    return int(raw) if raw else DEFAULT_MAX_QUBITS


def _check_guard(q: int, limit: int | None):
    limit = max_qubits() if limit is None else limit
    if q > limit:
        raise EmulationError(
            f"circuit has {q} qubits, over the emulation guard of {limit} (set {GUARD_ENV})"
        )


# ---------------------------------------------------------------------------
# index helpers


def _pattern_indices(q: int, fixed: dict[int, int]) -> np.ndarray:
    """All basis indices whose bits agree with ``fixed`` (qubit -> bit)."""
    base = 0
    for qb, bit in fixed.items():
        base |= bit << qb
    free = [i for i in range(q) if i not in fixed]
    combos = np.arange(1 << len(free), dtype=np.int64)
    idx = np.full(combos.shape, base, dtype=np.int64)
    for pos, qb in enumerate(free):
        idx |= ((combos >> pos) & 1) << qb
    return idx


def _register_gather(q: int, register) -> np.ndarray:
    """Index table of shape ``(2**m, 2**(q-m))``: row = register value."""
    m = len(register)
    rest = _pattern_indices(q, {qb: 0 for qb in register})
    vals = np.arange(1 << m, dtype=np.int64)
    offs = np.zeros(vals.shape, dtype=np.int64)
    for pos, qb in enumerate(register):
        offs |= ((vals >> pos) & 1) << qb
    return offs[:, None] + rest[None, :]


def _cared(controls) -> dict[int, int]:
    return {qb: bit for qb, bit, care in controls if care}


def householder(amplitudes) -> np.ndarray:
    """Real orthogonal, symmetric ``H`` with ``H e0 = amplitudes``."""
    a = np.asarray(amplitudes, dtype=float)
    norm = np.linalg.norm(a)
    if not np.isclose(norm, 1.0, rtol=0, atol=1e-12):
        raise EmulationError(f"prep amplitudes must be normalised (norm {norm})")
    u = -a.copy()
    u[0] += 1.0
    uu = float(u @ u)
    if uu < 1e-30:
        return np.eye(a.size)
    return np.eye(a.size) - 2.0 * np.outer(u, u) / uu


class _Compiled:
    """Per-circuit cache of index tables and fused rotation/phase runs."""

    def __init__(self, circuit: CircuitIR):
        self.q = circuit.num_qubits
        self.steps = []
        gates = circuit.gates
        i = 0
        while i < len(gates):
            g = gates[i]
            if isinstance(g, MultiplexedRy):
                j = i
                while j < len(gates) and isinstance(gates[j], MultiplexedRy) and gates[j].target == g.target:
                    j += 1
                self.steps.append(self._ry_run(gates[i:j]))
                i = j
                continue
            if isinstance(g, MultiplexedPhase):
                j = i
                while j < len(gates) and isinstance(gates[j], MultiplexedPhase):
                    j += 1
                self.steps.append(self._phase_run(gates[i:j]))
                i = j
                continue
            self.steps.append(self._single(g))
            i += 1

    def _check_qubits(self, qs):
        for qb in qs:
            if qb < 0 or qb >= self.q:
                raise EmulationError(f"qubit index {qb} out of range for {self.q} qubits")

    def _ry_run(self, run):
        # Ry on one target commute; rotations on the same pair add their angles
        t = run[0].target
        self._check_qubits([t])
        idx_parts, ang_parts = [], []
        for g in run:
            self._check_qubits(c[0] for c in g.controls)
            if g.angle == 0.0:
                continue
            fixed = _cared(g.controls)
            if t in fixed:
                raise EmulationError("rotation target is also a control")
            fixed[t] = 0
            idx = _pattern_indices(self.q, fixed)
            idx_parts.append(idx)
            ang_parts.append(np.full(idx.size, g.angle))
        if not idx_parts:
            return ("noop",)
        idx = np.concatenate(idx_parts)
        ang = np.concatenate(ang_parts)
        uniq, inv = np.unique(idx, return_inverse=True)
        total = np.zeros(uniq.size)
        np.add.at(total, inv, ang)
        return ("ry", uniq, uniq | (1 << t), np.cos(total / 2)[:, None], np.sin(total / 2)[:, None])

    def _phase_run(self, run):
        idx_parts, ang_parts = [], []
        for g in run:
            self._check_qubits(c[0] for c in g.controls)
            if g.angle == 0.0:
                continue
            idx = _pattern_indices(self.q, _cared(g.controls))
            idx_parts.append(idx)
            ang_parts.append(np.full(idx.size, g.angle))
        if not idx_parts:
            return ("noop",)
        idx = np.concatenate(idx_parts)
        uniq, inv = np.unique(idx, return_inverse=True)
        total = np.zeros(uniq.size)
        np.add.at(total, inv, np.concatenate(ang_parts))
        return ("phase", uniq, np.exp(1j * total)[:, None])

    def _single(self, g):
        q = self.q
        if isinstance(g, PauliX):
            self._check_qubits([g.target])
            return ("perm", np.arange(1 << q, dtype=np.int64) ^ (1 << g.target))
        if isinstance(g, ControlledAdd):
            self._check_qubits(g.register)
            self._check_qubits(c[0] for c in g.controls)
            m = len(g.register)
            idx = np.arange(1 << q, dtype=np.int64)
            val = np.zeros_like(idx)
            for pos, qb in enumerate(g.register):
                val |= ((idx >> qb) & 1) << pos
            active = np.ones(idx.shape, dtype=bool)
            for qb, bit, care in g.controls:
                if care:
                    active &= ((idx >> qb) & 1) == bit
            new_val = (val + g.addend) % (1 << m)
            dest = idx.copy()
            for pos, qb in enumerate(g.register):
                dest = np.where(active, (dest & ~(1 << qb)) | (((new_val >> pos) & 1) << qb), dest)
            # new_state[dest[i]] = state[i]  ->  new_state = state[src]
            src = np.empty_like(dest)
            src[dest] = idx
            return ("perm", src)
        if isinstance(g, PrepLoad):
            self._check_qubits(g.register)
            h = householder(g.amplitudes)
            if len(g.amplitudes) != 1 << len(g.register):
                raise EmulationError("prep amplitudes do not match register size")
            return ("unitary", _register_gather(q, g.register), h.T if g.adjoint else h)
        if isinstance(g, QFTBlock):
            self._check_qubits(g.register)
            return ("qft", _register_gather(q, g.register), g.inverse)
        raise EmulationError(f"unsupported gate {g!r}")

    def run(self, state: np.ndarray) -> np.ndarray:
        for step in self.steps:
            op = step[0]
            if op == "noop":
                continue
            if op == "ry":
                _, i0, i1, c, s = step
                a0 = state[i0]
                a1 = state[i1]
                state[i0] = c * a0 - s * a1
                state[i1] = s * a0 + c * a1
            elif op == "phase":
                _, idx, ph = step
                state[idx] *= ph
            elif op == "perm":
                state = state[step[1]]
            elif op == "unitary":
                _, table, u = step
                block = state[table]  # (2^m, rest, batch)
                state[table] = np.tensordot(u, block, axes=(1, 0))
            elif op == "qft":
                _, table, inverse = step
                block = state[table]
                fn = np.fft.ifft if inverse else np.fft.fft
                state[table] = fn(block, axis=0, norm="ortho")
        return state


def apply_circuit(circuit: CircuitIR, state, guard: int | None = None) -> np.ndarray:
    """Apply ``circuit`` to a statevector (1-D) or a batch of them (columns)."""
    _check_guard(circuit.num_qubits, guard)
    state = np.array(state, dtype=complex)
    flat = state.ndim == 1
    if flat:
        state = state[:, None]
    if state.shape[0] != 1 << circuit.num_qubits:
        raise EmulationError(
            f"state has {state.shape[0]} amplitudes, circuit needs {1 << circuit.num_qubits}"
        )
    out = _Compiled(circuit).run(state)
    return out[:, 0] if flat else out


def basis_state(q: int, index: int) -> np.ndarray:
    s = np.zeros(1 << q, dtype=complex)
    s[index] = 1.0
    return s


# ---------------------------------------------------------------------------
# block extraction


def _embed(register, values: np.ndarray) -> np.ndarray:
    out = np.zeros(values.shape, dtype=np.int64)
    for pos, qb in enumerate(register):
        out |= ((values >> pos) & 1) << qb
    return out


def extract_block(enc, system=None, guard: int | None = None, batch: int | None = None) -> np.ndarray:
    """The block of ``enc.circuit`` with every ancilla in ``|0...0>``.

    ``system`` lists the qubits that index rows/columns (default: the
    encoding's system register); every other qubit is an ancilla.  Columns
    are pushed through the circuit in batches sized to keep memory bounded.
    """
    circuit = enc.circuit
    q = circuit.num_qubits
    _check_guard(q, guard)
    system = tuple(enc.system_qubits if system is None else system)
    dim = 1 << len(system)
    cols = _embed(system, np.arange(dim, dtype=np.int64))
    if batch is None:
        batch = max(1, min(dim, BATCH_BYTES // (16 << q)))
    compiled = _Compiled(circuit)
    block = np.zeros((dim, dim), dtype=complex)
    for start in range(0, dim, batch):
        stop = min(dim, start + batch)
        state = np.zeros((1 << q, stop - start), dtype=complex)
        state[cols[start:stop], np.arange(stop - start)] = 1.0
        state = compiled.run(state)
        block[:, start:stop] = state[cols]
    return block


def realify(block: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Real part of ``block`` after asserting the imaginary part is below ``tol``."""
    imag = float(np.max(np.abs(block.imag), initial=0.0))
    if imag > tol:
        raise EmulationError(f"extracted block is not real (max |imag| = {imag:.3e})")
    return np.ascontiguousarray(block.real)


@dataclass
class VerificationReport:
    max_abs_err: float
    passed: bool
    n: int
    q: int
    gate_count: int
    wall_time: float
    tol: float
    worst_entry: tuple[int, int] = (0, 0)

    def to_json(self) -> str:
        return json.dumps(asdict(self))


def verify_encoding(enc, target, tol: float = 1e-9, guard: int | None = None) -> VerificationReport:
    """Compare ``subnorm * block`` with ``target``; failures are reported, not raised."""
    t0 = time.perf_counter()
    dense = target.to_dense() if hasattr(target, "to_dense") else np.asarray(target)
    block = extract_block(enc, guard=guard)
    diff = np.abs(enc.subnorm * block - dense)
    worst = np.unravel_index(int(np.argmax(diff)), diff.shape)
    err = float(diff[worst])
    return VerificationReport(
        max_abs_err=err,
        passed=bool(err <= tol),
        n=dense.shape[0],
        q=enc.circuit.num_qubits,
        gate_count=enc.circuit.gate_count,
        wall_time=time.perf_counter() - t0,
        tol=tol,
        worst_entry=(int(worst[0]), int(worst[1])),
    )
