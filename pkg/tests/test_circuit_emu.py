import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qprecon.circuit import (
    CircuitIR,
    ControlledAdd,
    MultiplexedPhase,
    MultiplexedRy,
    PauliX,
    PrepLoad,
    QFTBlock,
    controls_for,
    gate_qubits,
    num_bits,
    pattern_string,
    relabel_gate,
)
from qprecon.emu import (
    EmulationError,
    apply_circuit,
    basis_state,
    extract_block,
    householder,
    realify,
)


def _bits(i, qubits):
    return sum(((i >> q) & 1) << pos for pos, q in enumerate(qubits))


def _matches(i, controls):
    return all(((i >> q) & 1) == b for q, b, care in controls if care)


def dense_unitary(circuit: CircuitIR) -> np.ndarray:
    """Column-by-column reference built from the gate definitions."""
    dim = 1 << circuit.num_qubits
    u = np.eye(dim, dtype=complex)
    for g in circuit.gates:
        step = np.zeros((dim, dim), dtype=complex)
        for i in range(dim):
            if isinstance(g, MultiplexedRy):
                if not _matches(i, g.controls):
                    step[i, i] = 1
                    continue
                c, s = math.cos(g.angle / 2), math.sin(g.angle / 2)
                bit = (i >> g.target) & 1
                i0 = i & ~(1 << g.target)
                i1 = i0 | (1 << g.target)
                if bit == 0:
                    step[i0, i] += c
                    step[i1, i] += s
                else:
                    step[i0, i] += -s
                    step[i1, i] += c
            elif isinstance(g, MultiplexedPhase):
                step[i, i] = np.exp(1j * g.angle) if _matches(i, g.controls) else 1
            elif isinstance(g, PauliX):
                step[i ^ (1 << g.target), i] = 1
            elif isinstance(g, ControlledAdd):
                if not _matches(i, g.controls):
                    step[i, i] = 1
                    continue
                m = len(g.register)
                v = (_bits(i, g.register) + g.addend) % (1 << m)
                j = i
                for pos, q in enumerate(g.register):
                    j = (j & ~(1 << q)) | (((v >> pos) & 1) << q)
                step[j, i] = 1
            elif isinstance(g, (QFTBlock, PrepLoad)):
                m = len(g.register)
                if isinstance(g, QFTBlock):
                    k = np.arange(1 << m)
                    local = np.exp(-2j * np.pi * np.outer(k, k) / (1 << m)) / math.sqrt(1 << m)
                    local = local.conj().T if g.inverse else local
                else:
                    local = householder(g.amplitudes)
                    local = local.T if g.adjoint else local
                v = _bits(i, g.register)
                base = i
                for q in g.register:
                    base &= ~(1 << q)
                for w in range(1 << m):
                    j = base
                    for pos, q in enumerate(g.register):
                        j |= ((w >> pos) & 1) << q
                    step[j, i] = local[w, v]
        u = step @ u
    return u


def _control(q_all, target, draw):
    qs = [q for q in q_all if q != target]
    chosen = draw(st.lists(st.sampled_from(qs), unique=True, max_size=len(qs))) if qs else []
    return tuple((q, draw(st.integers(0, 1)), draw(st.booleans())) for q in chosen)


@st.composite
def circuits(draw, q=3):
    qubits = list(range(q))
    gates = []
    for _ in range(draw(st.integers(1, 7))):
        kind = draw(st.sampled_from(["ry", "phase", "x", "add", "qft", "prep"]))
        if kind == "ry":
            t = draw(st.sampled_from(qubits))
            gates.append(MultiplexedRy(t, _control(qubits, t, draw), draw(st.floats(-4, 4))))
        elif kind == "phase":
            gates.append(MultiplexedPhase(_control(qubits, None, draw), draw(st.floats(-4, 4))))
        elif kind == "x":
            gates.append(PauliX(draw(st.sampled_from(qubits))))
        else:
            reg = tuple(draw(st.lists(st.sampled_from(qubits), unique=True, min_size=1, max_size=2)))
            if kind == "add":
                rest = [x for x in qubits if x not in reg]
                ctl = _control(rest, None, draw) if rest else ()
                gates.append(ControlledAdd(reg, draw(st.integers(0, 7)), ctl))
            elif kind == "qft":
                gates.append(QFTBlock(reg, draw(st.booleans())))
            else:
                v = np.array(draw(st.lists(st.floats(-1, 1), min_size=1 << len(reg), max_size=1 << len(reg))))
                if np.linalg.norm(v) < 1e-3:
                    v[0] = 1.0
                gates.append(PrepLoad(reg, tuple(v / np.linalg.norm(v)), draw(st.booleans())))
    return CircuitIR(q, {}, gates)


class TestEmulator:
    def test_empty(self):
        s = np.array([0.6, 0.8j, 0, 0])
        np.testing.assert_array_equal(apply_circuit(CircuitIR(2, {}), s), s)

    def test_ry_pi(self):
        out = apply_circuit(CircuitIR(1, {}, [MultiplexedRy(0, (), math.pi)]), basis_state(1, 0))
        np.testing.assert_allclose(np.abs(out), [0, 1], atol=1e-15)

    def test_qft_round_trip(self, rng):
        reg = (0, 1, 2)
        s = rng.standard_normal(16) + 1j * rng.standard_normal(16)
        c = CircuitIR(4, {"j": reg}, [QFTBlock(reg), QFTBlock(reg, inverse=True)])
        np.testing.assert_allclose(apply_circuit(c, s), s, atol=1e-12)

    @given(circuits())
    @settings(max_examples=80, deadline=None)
    def test_matches_dense_reference(self, circ):
        u = dense_unitary(circ)
        got = apply_circuit(circ, np.eye(8, dtype=complex))
        np.testing.assert_allclose(got, u, atol=1e-12)
        # unitarity keeps every column at norm 1
        np.testing.assert_allclose(np.linalg.norm(got, axis=0), 1.0, atol=1e-12)

    def test_fused_rotations(self):
        g = [MultiplexedRy(0, ((1, 1, True),), 0.3), MultiplexedRy(0, ((1, 1, True),), 0.4),
             MultiplexedRy(0, ((1, 0, False),), -0.2)]
        c = CircuitIR(2, {}, g)
        np.testing.assert_allclose(apply_circuit(c, np.eye(4)), dense_unitary(c), atol=1e-14)

    def test_adder_wraps(self):
        c = CircuitIR(2, {"r": (0, 1)}, [ControlledAdd((0, 1), 3)])
        out = apply_circuit(c, basis_state(2, 2))
        assert out[1] == 1.0

    def test_householder(self, rng):
        a = rng.standard_normal(8)
        a /= np.linalg.norm(a)
        h = householder(a)
        np.testing.assert_allclose(h[:, 0], a, atol=1e-15)
        np.testing.assert_allclose(h @ h, np.eye(8), atol=1e-14)
        with pytest.raises(EmulationError):
            householder([1.0, 1.0])

    def test_guard(self, monkeypatch):
        c = CircuitIR(5, {})
        monkeypatch.setenv("QPRECON_MAX_QUBITS", "4")
        with pytest.raises(EmulationError, match="guard"):
            apply_circuit(c, basis_state(5, 0))
        monkeypatch.setenv("QPRECON_MAX_QUBITS", "5")
        apply_circuit(c, basis_state(5, 0))

    @pytest.mark.parametrize("gate", [
        PauliX(3), MultiplexedRy(0, ((0, 1, True),), 0.1), MultiplexedRy(0, ((7, 1, True),), 0.1),
        PrepLoad((0,), (1.0, 1.0)), PrepLoad((0, 1), (1.0, 0.0)),
    ])
    def test_bad_gates(self, gate):
        with pytest.raises(EmulationError):
            apply_circuit(CircuitIR(2, {}, [gate]), basis_state(2, 0))

    def test_wrong_state_size(self):
        with pytest.raises(EmulationError):
            apply_circuit(CircuitIR(2, {}), np.ones(3))

    def test_extract_block_batches(self):
        c = CircuitIR(3, {"j": (0, 1), "a": (2,)}, [MultiplexedRy(2, (), 0.7), ControlledAdd((0, 1), 1)])

        class Enc:
            circuit = c
            system_qubits = (0, 1)

        full = extract_block(Enc())
        assert np.allclose(full, extract_block(Enc(), batch=1))
        np.testing.assert_allclose(full, math.cos(0.35) * np.roll(np.eye(4), 1, axis=0), atol=1e-15)

    def test_realify(self):
        assert realify(np.array([1 + 1e-14j])).dtype == float
        with pytest.raises(EmulationError):
            realify(np.array([1 + 1e-3j]))


class TestCircuitIR:
    def test_json_round_trip(self):
        c = CircuitIR(3, {"j": (0, 1), "d0": (2,)}, [
            MultiplexedRy(2, controls_for((0, 1), 2), 0.5, diagonal=-1),
            MultiplexedPhase(((2, 0, True),), 0.25),
            ControlledAdd((0, 1), 3, ((2, 1, False),)),
            QFTBlock((0, 1), True), PauliX(2), PrepLoad((0,), (0.6, 0.8), True),
        ])
        back = CircuitIR.from_json_obj(__import__("json").loads(c.to_json()))
        assert back.gates == c.gates and back.registers == c.registers

    def test_counts(self):
        c = CircuitIR(2, {}, [MultiplexedRy(0, (), 0.5), MultiplexedRy(0, (), 0.5),
                              MultiplexedRy(1, (), 0.0), ControlledAdd((0,), 1), PrepLoad((1,), (1.0, 0.0))])
        k = c.counts()
        assert (k["rotations"], k["unique_angles"], k["adders"], k["prep"], k["gates"]) == (2, 1, 1, 1, 5)

    def test_registers_validated(self):
        with pytest.raises(ValueError):
            CircuitIR(2, {"a": (0, 1), "b": (1,)})
        with pytest.raises(ValueError):
            CircuitIR(2, {"a": (2,)})

    def test_helpers(self):
        assert controls_for((3, 4), 2) == ((3, 0, True), (4, 1, True))
        assert pattern_string(((0, 0, True), (1, 1, False), (2, 0, True))) == "0.0"
        g = relabel_gate(ControlledAdd((0, 1), 1, ((2, 1, True),)), {0: 5, 2: 7})
        assert gate_qubits(g) == {5, 1, 7}
        assert [num_bits(x) for x in (1, 2, 3, 4, 5)] == [0, 1, 2, 2, 3]
