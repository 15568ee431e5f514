import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from qprecon.matcore import (
    BandedMatrix,
    MatrixError,
    MatrixMarketError,
    MatrixSource,
    SingularMatrixError,
    banded_multiply,
    diagonal_scale,
    drop_zero_diagonals,
    generate_test_matrix,
    kappa_sub,
    max_norm_scale,
    read_json,
    read_matrix_market,
    spectral_metrics,
    write_json,
    write_matrix_market,
)
from qprecon.precond import spai_column

from conftest import mesh_matrix, scaled_mesh


def _brute_stencil(dims):
    """Dense assembly straight from the face list."""
    n = math.prod(dims)
    a = np.zeros((n, n))
    strides = np.cumprod((1,) + tuple(dims[:-1]))
    for cell in np.ndindex(*dims[::-1]):
        coords = cell[::-1]
        i = int(np.dot(coords, strides))
        for axis, d in enumerate(dims):
            if coords[axis] + 1 < d:
                j = i + int(strides[axis])
                a[i, j] -= 1
                a[j, i] -= 1
                a[i, i] += 1
                a[j, j] += 1
    a[0, 0] += 1
    return a


banded = st.integers(2, 9).flatmap(
    lambda n: st.lists(st.integers(-(n - 1), n - 1), min_size=1, max_size=4, unique=True).flatmap(
        lambda offs: st.tuples(
            st.just(n),
            st.tuples(*[st.lists(st.floats(-3, 3), min_size=n - abs(k), max_size=n - abs(k))
                        for k in offs]).map(lambda vs: dict(zip(offs, vs))),
        )
    )
).map(lambda t: BandedMatrix(t[0], t[1]))


class TestGeneration:
    def test_4x4_mesh_offsets(self):
        a = generate_test_matrix(MatrixSource("generated-2d-pressure", (4, 4)))
        assert a.n == 16
        assert a.offsets == [-4, -1, 0, 1, 4]

    def test_2x2_row_sums(self):
        a = mesh_matrix(2).to_dense()
        sums = a.sum(axis=1)
        assert sums[0] == 1.0
        assert np.all(sums[1:] == 0.0)

    def test_3d_mesh_diagonals(self):
        a = generate_test_matrix(MatrixSource("generated-3d-laplacian", (4, 4, 4)))
        assert a.n == 64
        assert a.offsets == [-16, -4, -1, 0, 1, 4, 16]
        np.testing.assert_array_equal(a.to_dense(), _brute_stencil((4, 4, 4)))

    @pytest.mark.parametrize("dims", [(2, 2), (3, 5), (8, 8)])
    def test_matches_brute_force(self, dims):
        a = generate_test_matrix(MatrixSource("generated-2d-pressure", dims))
        np.testing.assert_array_equal(a.to_dense(), _brute_stencil(dims))

    def test_non_power_of_two_warns(self):
        a = generate_test_matrix(MatrixSource("generated-2d-pressure", (3, 3)))
        assert "power of two" in a.meta["warning"]

    def test_jitter_is_seeded_and_symmetric(self):
        a = mesh_matrix(8, 0.3, 1).to_dense()
        b = mesh_matrix(8, 0.3, 1).to_dense()
        np.testing.assert_array_equal(a, b)
        np.testing.assert_allclose(a, a.T)
        assert not np.array_equal(a, mesh_matrix(8, 0.3, 2).to_dense())

    @pytest.mark.parametrize("kwargs", [
        dict(kind="nope", dims=(2, 2)),
        dict(kind="generated-2d-pressure", dims=(4,)),
        dict(kind="generated-2d-pressure", dims=(1, 4)),
        dict(kind="matrix-market-file"),
        dict(kind="generated-2d-pressure", dims=(4, 4), jitter=1.5),
    ])
    def test_bad_sources(self, kwargs):
        with pytest.raises(MatrixError):
            MatrixSource(**kwargs)


class TestBandedMatrix:
    @given(banded)
    @settings(max_examples=60, deadline=None)
    def test_dense_round_trip(self, m):
        back = BandedMatrix.from_dense(m.to_dense(), keep_zero=True)
        np.testing.assert_array_equal(back.to_dense(), m.to_dense())
        np.testing.assert_array_equal(BandedMatrix.from_sparse(m.to_sparse()).to_dense(), m.to_dense())

    @given(banded, st.data())
    @settings(max_examples=60, deadline=None)
    def test_matvec_and_transpose(self, m, data):
        x = np.array(data.draw(st.lists(st.floats(-2, 2), min_size=m.n, max_size=m.n)))
        np.testing.assert_allclose(m.matvec(x), m.to_dense() @ x, atol=1e-12)
        np.testing.assert_array_equal(m.transpose().to_dense(), m.to_dense().T)

    def test_bad_shapes(self):
        with pytest.raises(MatrixError):
            BandedMatrix(3, {0: [1, 2]})
        with pytest.raises(MatrixError):
            BandedMatrix(3, {3: []})
        with pytest.raises(MatrixError):
            BandedMatrix.from_dense(np.ones((2, 3)))

    def test_json_round_trip(self, tmp_path):
        a = mesh_matrix(4)
        write_json(a, tmp_path / "a.json")
        assert read_json(tmp_path / "a.json").same_as(a)


class TestMatrixMarket:
    def test_diagonal_file(self, tmp_path):
        p = tmp_path / "d.mtx"
        p.write_text("%%MatrixMarket matrix coordinate real general\n2 2 2\n1 1 2.0\n2 2 2.0\n")
        m = read_matrix_market(p)
        np.testing.assert_array_equal(m.to_dense(), np.diag([2.0, 2.0]))
        assert m.offsets == [0]

    def test_symmetric_expansion(self, tmp_path):
        p = tmp_path / "s.mtx"
        p.write_text("%%MatrixMarket matrix coordinate real symmetric\n3 3 5\n"
                     "1 1 2\n2 2 2\n3 3 2\n2 1 -1\n3 2 -1\n")
        want = 2 * np.eye(3) - np.eye(3, k=1) - np.eye(3, k=-1)
        np.testing.assert_array_equal(read_matrix_market(p).to_dense(), want)

    def test_round_trip_generated(self, tmp_path):
        a = mesh_matrix(4, 0.3)
        write_matrix_market(a, tmp_path / "a.mtx")
        assert read_matrix_market(tmp_path / "a.mtx").same_as(a)

    @pytest.mark.parametrize("body", [
        "%%MatrixMarket matrix coordinate real general\n2 3 1\n1 1 1.0\n",
        "%%MatrixMarket matrix coordinate real general\n2 2 1\n3 1 1.0\n",
        "%%MatrixMarket matrix coordinate complex general\n2 2 1\n1 1 1.0 0.0\n",
        "%%MatrixMarket matrix array real general\n2 2\n1\n0\n0\n1\n",
        "not a header\n",
    ])
    def test_rejects(self, tmp_path, body):
        p = tmp_path / "bad.mtx"
        p.write_text(body)
        with pytest.raises(MatrixMarketError):
            read_matrix_market(p)


class TestScaling:
    def test_diag_and_identity(self):
        s, d = diagonal_scale(BandedMatrix.diag([2.0, 4.0]))
        np.testing.assert_array_equal(s.to_dense(), np.eye(2))
        np.testing.assert_array_equal(d.to_dense(), np.diag([2.0, 4.0]))
        s, d = diagonal_scale(BandedMatrix.identity(3))
        assert s.same_as(BandedMatrix.identity(3)) and d.same_as(BandedMatrix.identity(3))

    @pytest.mark.parametrize("m", [4, 8, 16])
    def test_generated_signature(self, m):
        s = scaled_mesh(m)
        assert np.all(s.diagonals[0] == 1.0)
        off = max(float(np.max(np.abs(v))) for k, v in s.diagonals.items() if k)
        assert off == 0.5

    def test_reconstructs(self):
        a = mesh_matrix(4, 0.2)
        s, d = diagonal_scale(a)
        np.testing.assert_allclose(d.to_dense() @ s.to_dense(), a.to_dense(), rtol=1e-14)

    def test_zero_diagonal(self):
        with pytest.raises(MatrixError, match="row 1"):
            diagonal_scale(BandedMatrix.diag([1.0, 0.0]))

    def test_max_norm(self):
        s, r = max_norm_scale(BandedMatrix.diag([2.0, -1.0]))
        assert r == 2.0 and s.max_abs() == 1.0
        s, r = max_norm_scale(scaled_mesh(4))
        assert r == 1.0 and s.same_as(scaled_mesh(4))

    def test_spai_norm_above_one(self):
        assert spai_column(scaled_mesh(4), 0).max_abs() > 1.0


class TestMultiply:
    def test_identity(self):
        a = mesh_matrix(4)
        assert banded_multiply(BandedMatrix.identity(16), a).to_dense().tolist() == a.to_dense().tolist()

    def test_tridiagonal_product_offsets(self):
        t = BandedMatrix.toeplitz({-1: 1.0, 0: 2.0, 1: 3.0}, 6)
        assert banded_multiply(t, t).offsets == [-2, -1, 0, 1, 2]

    @given(banded, st.data())
    @settings(max_examples=60, deadline=None)
    def test_matches_dense(self, a, data):
        offs = data.draw(st.lists(st.integers(-(a.n - 1), a.n - 1), min_size=1, max_size=3, unique=True))
        p = BandedMatrix(a.n, {k: np.linspace(-1, 1, a.n - abs(k)) for k in offs})
        np.testing.assert_allclose(banded_multiply(p, a).to_dense(), p.to_dense() @ a.to_dense(), atol=1e-12)

    def test_spai1_table_counts(self):
        a = scaled_mesh(16)
        full = banded_multiply(spai_column(a, 1), a)
        assert full.ndiag == 25
        assert drop_zero_diagonals(full).ndiag == 13

    def test_spai3_table_counts(self):
        a = scaled_mesh(16)
        full = banded_multiply(spai_column(a, 3), a)
        assert (drop_zero_diagonals(full).ndiag, full.ndiag) == (21, 61)

    def test_drop_keeps_nonzero(self):
        a = mesh_matrix(4)
        out = drop_zero_diagonals(a, tol=1e-12)
        assert out.same_as(a) and out.meta["dropped_diagonals"] == 0
        with pytest.raises(MatrixError):
            drop_zero_diagonals(a, tol=-1)

    def test_dimension_mismatch(self):
        with pytest.raises(MatrixError):
            banded_multiply(BandedMatrix.identity(2), BandedMatrix.identity(3))


class TestSpectrum:
    def test_identity(self):
        s = spectral_metrics(BandedMatrix.identity(4))
        assert (s.sigma_min, s.sigma_max, s.kappa) == (1.0, 1.0, 1.0)

    def test_diag(self):
        assert spectral_metrics(BandedMatrix.diag([1.0, 0.1])).kappa == pytest.approx(10.0, rel=1e-14)

    @pytest.mark.parametrize("m,jitter", [(4, 0.0), (8, 0.3), (16, 0.0)])
    def test_iterative_matches_svd(self, m, jitter):
        a = scaled_mesh(m, jitter)
        sv = np.linalg.svd(a.to_dense(), compute_uv=False)
        it = spectral_metrics(a, method="iterative")
        assert it.sigma_min == pytest.approx(sv[-1], rel=1e-8)
        assert it.sigma_max == pytest.approx(sv[0], rel=1e-8)
        assert spectral_metrics(a, method="direct").kappa == pytest.approx(sv[0] / sv[-1], rel=1e-12)

    def test_singular(self):
        z = BandedMatrix(4, {0: [1.0, 1.0, 1.0, 0.0]})
        with pytest.raises(SingularMatrixError):
            spectral_metrics(z)
        with pytest.raises(SingularMatrixError):
            spectral_metrics(z, method="iterative")

    def test_kappa_sub(self):
        assert kappa_sub(3.0, 0.01) == pytest.approx(300.0)
        assert kappa_sub(1.0, 0.25) == 4.0
        with pytest.raises(MatrixError):
            kappa_sub(0.0, 1.0)


def test_sparse_input_accepted():
    m = BandedMatrix.from_sparse(sp.eye(4, k=1, format="csr") * 2)
    assert m.offsets == [-1]
