"""Gate-level circuit IR used by the block encodings.

Qubit ``i`` is bit ``i`` of a basis-state index.  Registers are tuples of
qubits, least-significant first.  A control is ``(qubit, bit, care)``; a
control with ``care=False`` is a don't-care left behind by trimming.
"""
from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Iterable, Union

Control = tuple  # (qubit, bit, care)


def controls_for(register: Iterable[int], value: int) -> tuple[Control, ...]:
    """Fully cared controls selecting ``value`` on ``register``."""
    return tuple((q, (value >> i) & 1, True) for i, q in enumerate(register))


def pattern_string(controls) -> str:
    """Control pattern MSB-first, with ``.`` for don't-care bits."""
    return "".join(str(b) if care else "." for _, b, care in reversed(controls))


@dataclass(frozen=True)
class MultiplexedRy:
    target: int
    controls: tuple
    angle: float
    diagonal: int | None = None  # offset of the matrix diagonal this rotation loads

    kind = "ry"


@dataclass(frozen=True)
class MultiplexedPhase:
    """Multiply amplitudes matching ``controls`` by ``exp(i angle)``."""

    controls: tuple
    angle: float

    kind = "phase"


@dataclass(frozen=True)
class ControlledAdd:
    register: tuple
    addend: int
    controls: tuple = ()

    kind = "add"


@dataclass(frozen=True)
class QFTBlock:
    """Unitary DFT with ``omega = exp(-2 pi i / N)`` on ``register``; ``inverse`` applies its adjoint."""

    register: tuple
    inverse: bool = False

    kind = "qft"


@dataclass(frozen=True)
class PauliX:
    target: int

    kind = "x"


@dataclass(frozen=True)
class PrepLoad:
    """Real state preparation ``|0> -> sum_i amplitudes[i] |i>`` (or its adjoint)."""

    register: tuple
    amplitudes: tuple
    adjoint: bool = False

    kind = "prep"


Gate = Union[MultiplexedRy, MultiplexedPhase, ControlledAdd, QFTBlock, PauliX, PrepLoad]
GATE_TYPES = {g.kind: g for g in (MultiplexedRy, MultiplexedPhase, ControlledAdd, QFTBlock, PauliX, PrepLoad)}


def gate_qubits(g: Gate) -> set[int]:
    qs: set[int] = set()
    if isinstance(g, (MultiplexedRy, PauliX)):
        qs.add(g.target)
    if isinstance(g, (ControlledAdd, QFTBlock, PrepLoad)):
        qs.update(g.register)
    for c in getattr(g, "controls", ()):
        qs.add(c[0])
    return qs


def relabel_gate(g: Gate, mapping: dict[int, int]) -> Gate:
    m = mapping.get
    ctl = lambda cs: tuple((m(q, q), b, care) for q, b, care in cs)  # noqa: E731
    if isinstance(g, MultiplexedRy):
        return replace(g, target=m(g.target, g.target), controls=ctl(g.controls))
    if isinstance(g, MultiplexedPhase):
        return replace(g, controls=ctl(g.controls))
    if isinstance(g, PauliX):
        return replace(g, target=m(g.target, g.target))
    if isinstance(g, ControlledAdd):
        return replace(g, register=tuple(m(q, q) for q in g.register), controls=ctl(g.controls))
    return replace(g, register=tuple(m(q, q) for q in g.register))


@dataclass
class CircuitIR:
    num_qubits: int
    registers: dict[str, tuple[int, ...]]
    gates: list = field(default_factory=list)

    def __post_init__(self):
        seen: set[int] = set()
        for name, qs in self.registers.items():
            qs = tuple(int(q) for q in qs)
            self.registers[name] = qs
            if seen & set(qs):
                raise ValueError(f"register {name} overlaps another register")
            if any(q < 0 or q >= self.num_qubits for q in qs):
                raise ValueError(f"register {name} uses qubits outside 0..{self.num_qubits - 1}")
            seen |= set(qs)

    def append(self, g: Gate) -> None:
        self.gates.append(g)

    def rotations(self) -> list[MultiplexedRy]:
        return [g for g in self.gates if isinstance(g, MultiplexedRy) and g.angle != 0.0]

    def counts(self, angle_decimals: int = 12) -> dict[str, int]:
        """Gate-count summary.

        ``rotations`` and ``unique_angles`` count data-loading rotations only;
        state preparation is reported separately as ``prep``.
        """
        by_kind = Counter(g.kind for g in self.gates)
        rots = self.rotations()
        return {
            "rotations": len(rots),
            "unique_angles": len({round(g.angle, angle_decimals) for g in rots}),
            "adders": by_kind["add"],
            "qft_blocks": by_kind["qft"],
            "phases": by_kind["phase"],
            "prep": by_kind["prep"],
            "gates": len(self.gates),
        }

    @property
    def gate_count(self) -> int:
        return len(self.gates)

    # json -------------------------------------------------------------------

    def to_json_obj(self) -> dict:
        gates = []
        for g in self.gates:
            rec = {"gate": g.kind}
            for name, val in vars(g).items():
                if name in ("controls",):
                    val = [list(c) for c in val]
                elif isinstance(val, tuple):
                    val = list(val)
                rec[name] = val
            gates.append(rec)
        return {
            "num_qubits": self.num_qubits,
            "registers": {k: list(v) for k, v in self.registers.items()},
            "gates": gates,
            "counts": self.counts(),
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "CircuitIR":
        gates = []
        for rec in obj["gates"]:
            rec = dict(rec)
            typ = GATE_TYPES[rec.pop("gate")]
            for key in ("register", "amplitudes"):
                if key in rec:
                    rec[key] = tuple(rec[key])
            if "controls" in rec:
                rec["controls"] = tuple((int(q), int(b), bool(c)) for q, b, c in rec["controls"])
            gates.append(typ(**rec))
        return cls(int(obj["num_qubits"]), {k: tuple(v) for k, v in obj["registers"].items()}, gates)

    def to_json(self) -> str:
        return json.dumps(self.to_json_obj())


def num_bits(count: int) -> int:
    """Qubits needed to index ``count`` items (0 for a single item)."""
    return 0 if count <= 1 else math.ceil(math.log2(count))
