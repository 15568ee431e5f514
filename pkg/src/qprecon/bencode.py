"""Block-encoding circuits for Toeplitz, banded and circulant-preconditioned matrices.

Every encoding puts ``target / subnorm`` in the block where all ancillas are
``|0>``.  The column register ``j`` always occupies qubits ``0..log2(n)-1``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .circuit import (
    CircuitIR,
    ControlledAdd,
    MultiplexedPhase,
    MultiplexedRy,
    PauliX,
    PrepLoad,
    QFTBlock,
    controls_for,
    num_bits,
    relabel_gate,
)
from .matcore import BandedMatrix, MatrixError, is_power_of_two
from .precond import CirculantSpectrum


class EncodingError(MatrixError):
    pass


@dataclass
class BlockEncoding:
    circuit: CircuitIR
    subnorm: float
    target: str
    system: str = "j"
    extra_scale: float = 1.0
    info: dict = field(default_factory=dict)

    @property
    def system_qubits(self) -> tuple[int, ...]:
        return self.circuit.registers[self.system]

    @property
    def n(self) -> int:
        return 1 << len(self.system_qubits)

    @property
    def ancilla_qubits(self) -> tuple[int, ...]:
        sysq = set(self.system_qubits)
        return tuple(q for q in range(self.circuit.num_qubits) if q not in sysq)

    def summary(self) -> dict:
        return {
            "target": self.target,
            "n": self.n,
            "subnorm": self.subnorm,
            "extra_scale": self.extra_scale,
            "qubits": self.circuit.num_qubits,
            "registers": {k: len(v) for k, v in self.circuit.registers.items()},
            **self.circuit.counts(),
        }

    def to_json_obj(self) -> dict:
        return {
            "target": self.target,
            "subnorm": self.subnorm,
            "system": self.system,
            "extra_scale": self.extra_scale,
            "circuit": self.circuit.to_json_obj(),
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "BlockEncoding":
        return cls(
            CircuitIR.from_json_obj(obj["circuit"]),
            float(obj["subnorm"]),
            obj.get("target", ""),
            obj.get("system", "j"),
            float(obj.get("extra_scale", 1.0)),
        )


def _check_n(n: int):
    if not is_power_of_two(n) or n < 2:
        raise EncodingError(f"block encodings need n to be a power of two >= 2, got {n}")


def _layout(*sizes: tuple[str, int]) -> tuple[int, dict[str, tuple[int, ...]]]:
    regs, q = {}, 0
    for name, size in sizes:
        if size:
            regs[name] = tuple(range(q, q + size))
            q += size
    return q, regs


def _padded(amps, size: int) -> tuple[float, ...]:
    out = np.zeros(size)
    out[: len(amps)] = amps
    return tuple(float(x) for x in out)


def arcsin_angle(v: float) -> float:
    """Rotation angle so that ``X Ry(theta)`` has ``<0|.|0> = v``."""
    return 2.0 * math.asin(min(1.0, max(-1.0, v)))


# ---------------------------------------------------------------------------


def encode_toeplitz(t: dict[int, float], n: int) -> BlockEncoding:
    """PREP/UNPREP encoding of a Toeplitz matrix with constant diagonals ``t``.

    Diagonals are shifted by ``offset - min_offset`` under control of the
    ``s`` register, then one uncontrolled adder moves them into place.  The
    ``del`` qubit doubles the shifted register so wrap-around lands outside
    the top-left ``n x n`` block.
    """
    _check_n(n)
    coeffs = {int(k): float(v) for k, v in t.items() if v != 0.0}
    if not coeffs:
        raise EncodingError("Toeplitz map has no non-zero diagonal")
    if any(abs(k) >= n for k in coeffs):
        raise EncodingError(f"offset out of range for n={n}")
    offs = sorted(coeffs)
    nj = num_bits(n)
    ns = max(1, num_bits(len(offs)))
    q, regs = _layout(("j", nj), ("del", 1), ("s", ns))
    circ = CircuitIR(q, regs)
    total = sum(abs(c) for c in coeffs.values())
    prep = [math.sqrt(abs(coeffs[k]) / total) for k in offs]
    unprep = [math.copysign(a, coeffs[k]) for a, k in zip(prep, offs)]
    shift_reg = regs["j"] + regs["del"]
    circ.append(PrepLoad(regs["s"], _padded(prep, 1 << ns)))
    kmin = offs[0]
    for idx, k in enumerate(offs):
        if k != kmin:
            circ.append(ControlledAdd(shift_reg, (k - kmin) % (2 * n), controls_for(regs["s"], idx)))
    if kmin:
        circ.append(ControlledAdd(shift_reg, kmin % (2 * n)))
    circ.append(PrepLoad(regs["s"], _padded(unprep, 1 << ns), adjoint=True))
    return BlockEncoding(circ, total, "toeplitz", info={"coeffs": coeffs})


def encode_banded(a: BandedMatrix, extra_scale: float = 1.0, target: str = "banded") -> BlockEncoding:
    """LCU of separately loaded diagonals.

    Each diagonal is divided by its own max magnitude ``m_d`` and loaded with
    fully multiplexed ``Ry`` rotations on ``d0``; PREP loads ``sqrt(m_d / s)``
    and the subnormalisation is ``s = extra_scale * sum_d m_d``.  The encoded
    matrix is ``extra_scale * a``.
    """
    _check_n(a.n)
    if extra_scale <= 0:
        raise EncodingError("extra_scale must be positive")
    diags = [(k, v) for k, v in a.diagonals.items() if v.size and np.any(v != 0.0)]
    if not diags:
        raise EncodingError("matrix has no non-zero diagonal")
    n = a.n
    nj = num_bits(n)
    ns = num_bits(len(diags))
    q, regs = _layout(("j", nj), ("s", ns), ("d0", 1))
    circ = CircuitIR(q, regs)
    d0 = regs["d0"][0]
    maxes = [float(np.max(np.abs(v))) for _, v in diags]
    total = sum(maxes)
    if ns:
        prep = _padded([math.sqrt(m / total) for m in maxes], 1 << ns)
        circ.append(PrepLoad(regs["s"], prep))
    for idx, ((k, v), m) in enumerate(zip(diags, maxes)):
        sel = controls_for(regs["s"], idx) if ns else ()
        start = max(0, -k)
        scaled = v / m
        if np.any(np.abs(scaled) > 1.0 + 1e-12):
            raise EncodingError(f"diagonal {k} has values outside [-1, 1] after scaling")
        for pos in np.flatnonzero(scaled):
            col = start + int(pos)
            circ.append(MultiplexedRy(d0, controls_for(regs["j"], col) + sel,
                                      arcsin_angle(float(scaled[pos])), diagonal=k))
        if k % n:
            circ.append(ControlledAdd(regs["j"], k % n, sel))
    circ.append(PauliX(d0))
    if ns:
        circ.append(PrepLoad(regs["s"], prep, adjoint=True))
    return BlockEncoding(
        circ, total * extra_scale, target, extra_scale=extra_scale,
        info={"offsets": [k for k, _ in diags], "diag_max": maxes},
    )


def encode_diagonal(values, d0_name: str = "d0") -> tuple[CircuitIR, float]:
    """Encode a (possibly complex) diagonal matrix; returns circuit and scale ``max|v|``."""
    values = np.asarray(values, dtype=complex)
    n = values.size
    _check_n(n)
    scale = float(np.max(np.abs(values)))
    if scale == 0.0:
        raise EncodingError("diagonal is identically zero")
    q, regs = _layout(("j", num_bits(n)), (d0_name, 1))
    circ = CircuitIR(q, regs)
    d0 = regs[d0_name][0]
    w = values / scale
    for c in np.flatnonzero(w):
        circ.append(MultiplexedRy(d0, controls_for(regs["j"], int(c)), arcsin_angle(abs(w[c])), diagonal=0))
    circ.append(PauliX(d0))
    for c in np.flatnonzero(w):
        phase = float(np.angle(w[c]))
        if phase:
            circ.append(MultiplexedPhase(controls_for(regs["j"], int(c)) + ((d0, 0, True),), phase))
    return circ, scale


def _merge(first: CircuitIR, second: CircuitIR, prefix: tuple[str, str], system: str = "j") -> CircuitIR:
    """Run ``first`` then ``second``, sharing the system register and stacking ancillas."""
    sys_a, sys_b = first.registers[system], second.registers[system]
    if len(sys_a) != len(sys_b):
        raise EncodingError("system registers differ in size")
    mapping_a = {q: q for q in range(first.num_qubits)}
    mapping_b = dict(zip(sys_b, sys_a))
    nxt = first.num_qubits
    for qb in range(second.num_qubits):
        if qb not in mapping_b:
            mapping_b[qb] = nxt
            nxt += 1
    regs = {system: sys_a}
    for name, qs in first.registers.items():
        if name != system:
            regs[f"{prefix[0]}{name}"] = tuple(mapping_a[x] for x in qs)
    for name, qs in second.registers.items():
        if name != system:
            regs[f"{prefix[1]}{name}"] = tuple(mapping_b[x] for x in qs)
    gates = list(first.gates) + [relabel_gate(g, mapping_b) for g in second.gates]
    return CircuitIR(nxt, regs, gates)


def multiply_encodings(u_p: BlockEncoding, u_a: BlockEncoding) -> BlockEncoding:
    """Encoding of ``P A`` with subnormalisation ``alpha * beta``.

    ``U_A`` runs first; the ancillas of both factors are kept disjoint, so the
    product adds no gates.
    """
    if u_p.n != u_a.n:
        raise EncodingError(f"dimension mismatch: {u_p.n} vs {u_a.n}")
    circ = _merge(u_a.circuit, u_p.circuit, ("A.", "P."))
    return BlockEncoding(
        circ, u_p.subnorm * u_a.subnorm, f"({u_p.target})*({u_a.target})",
        info={"alpha": u_a.subnorm, "beta": u_p.subnorm,
              "gates_A": u_a.circuit.gate_count, "gates_P": u_p.circuit.gate_count},
    )


def encode_clai_product(spec: CirculantSpectrum, enc_a: BlockEncoding) -> BlockEncoding:
    """Encoding of ``C^-1 A`` as ``F^dagger (Lambda^-1 / max) F`` after ``U_A``."""
    if spec.n != enc_a.n:
        raise EncodingError("spectrum and encoding dimensions differ")
    inv = spec.inverse()
    diag_circ, scale = encode_diagonal(inv, "lam")
    j = diag_circ.registers["j"]
    wrapped = CircuitIR(diag_circ.num_qubits, dict(diag_circ.registers),
                        [QFTBlock(j)] + list(diag_circ.gates) + [QFTBlock(j, inverse=True)])
    circ = _merge(enc_a.circuit, wrapped, ("A.", "C."))
    return BlockEncoding(
        circ, enc_a.subnorm * scale, f"CLAI*({enc_a.target})",
        info={"alpha": enc_a.subnorm, "beta": scale, "r_p": scale,
              "gates_A": enc_a.circuit.gate_count, "gates_P": wrapped.gate_count},
    )


# ---------------------------------------------------------------------------
# amplification figures of merit


def preamp_figure_of_merit(alpha, beta, gamma1, gamma2, delta, eps, gates_a, gates_p) -> dict:
    """Figures of merit for plain and preamplified products of two encodings.

    Natural logarithms throughout.
    """
    if not (1 <= gamma1 < alpha):
        raise ValueError(f"need 1 <= gamma1 < alpha (gamma1={gamma1}, alpha={alpha})")
    if not (1 <= gamma2 < beta):
        raise ValueError(f"need 1 <= gamma2 < beta (gamma2={gamma2}, beta={beta})")
    if not (0 < delta < 1) or not (0 < eps < 1):
        raise ValueError("need 0 < delta < 1 and 0 < eps < 1")
    c = 3.0 / delta
    plain = alpha * beta * (gates_a + gates_p)
    pre = alpha * beta * (
        (1.0 / gamma2) * c * math.log(gamma1 / eps) * gates_a
        + (1.0 / gamma1) * c * math.log(gamma2 / eps) * gates_p
    )
    adv = gamma1 > c * math.log(gamma2 / eps) and gamma2 > c * math.log(gamma1 / eps)
    return {"fom_plain": plain, "fom_preamp": pre, "advantageous": bool(adv)}


def amplification_queries(gamma: float, delta: float, eps: float) -> float:
    return gamma * (3.0 / delta) * math.log(gamma / eps)


def max_amplification(enc_or_subnorm, sigma_max: float, delta: float) -> float:
    """Largest amplification that keeps amplified singular values in range."""
    s = enc_or_subnorm.subnorm if isinstance(enc_or_subnorm, BlockEncoding) else float(enc_or_subnorm)
    if sigma_max > s * (1 + 1e-12):
        raise EncodingError(f"sigma_max={sigma_max} exceeds subnormalisation {s}: invalid encoding")
    if not 0 < delta < 1:
        raise ValueError("need 0 < delta < 1")
    return (1.0 - delta) * s / sigma_max
