"""Dense kernels: singular values, inner products, permutation application."""

import numpy as np
import pytest

from conftest import charpoly_singular_values, dense_perm_matrix
from taskport.errors import NumericalFailureError
from taskport.linalg import (
    frobenius_inner,
    permute_cols,
    permute_rows,
    singular_values,
    vector_pnorm,
)


class TestSingularValues:
    def test_diagonal_embedded(self):
        m = np.zeros((2, 3))
        m[0, 0], m[1, 1] = 2.0, 1.0
        np.testing.assert_allclose(singular_values(m), [2.0, 1.0], atol=1e-14)

    def test_zero_matrix(self):
        assert np.array_equal(singular_values(np.zeros((3, 3))), np.zeros(3))

    def test_against_charpoly_oracle(self):
        """Gram-eigenvalue square roots from characteristic-polynomial roots
        must agree to 1e-8 on matrices up to 8x8."""
        rng = np.random.default_rng(10)
        for _ in range(200):
            rows = int(rng.integers(1, 9))
            cols = int(rng.integers(1, 9))
            m = rng.normal(size=(rows, cols)) * 10.0 ** float(rng.integers(-2, 3))
            mine = singular_values(m)
            oracle = charpoly_singular_values(m)
            scale = max(1.0, oracle.max())
            np.testing.assert_allclose(mine, oracle, atol=1e-8 * scale)

    def test_permutation_invariance(self):
        """Row/column permutations never change the spectrum (500 trials)."""
        rng = np.random.default_rng(11)
        worst = 0.0
        for _ in range(500):
            m = rng.normal(size=(6, 24))
            permuted = m[rng.permutation(6)][:, rng.permutation(24)]
            worst = max(worst, np.abs(singular_values(m) - singular_values(permuted)).max())
        assert worst <= 1e-9

    def test_descending_and_nonnegative(self):
        rng = np.random.default_rng(12)
        sv = singular_values(rng.normal(size=(5, 7)))
        assert len(sv) == 5
        assert np.all(sv >= 0)
        assert np.all(np.diff(sv) <= 0)

    def test_iteration_cap_raises(self):
        rng = np.random.default_rng(13)
        with pytest.raises(NumericalFailureError):
            singular_values(rng.normal(size=(6, 6)), max_sweeps=0)

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            singular_values(np.array([[1.0, np.nan]]))


class TestFrobeniusInner:
    def test_identity_with_itself(self):
        assert frobenius_inner(np.eye(2), np.eye(2)) == 2.0

    def test_zero(self):
        assert frobenius_inner(np.ones((3, 2)), np.zeros((3, 2))) == 0.0

    def test_hand_value(self):
        assert frobenius_inner([[1, 2], [3, 4]], [[1, 0], [0, 1]]) == 5.0

    def test_symmetry_and_bilinearity(self):
        rng = np.random.default_rng(14)
        a, b, c = (rng.normal(size=(4, 5)) for _ in range(3))
        assert frobenius_inner(a, b) == pytest.approx(frobenius_inner(b, a))
        assert frobenius_inner(a, 2.0 * b + c) == pytest.approx(
            2.0 * frobenius_inner(a, b) + frobenius_inner(a, c)
        )

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            frobenius_inner(np.eye(2), np.eye(3))


class TestVectorPnorm:
    def test_equal_vectors(self):
        assert vector_pnorm([1.0, 2.0], [1.0, 2.0]) == 0.0

    def test_hand_values(self):
        assert vector_pnorm([2, 1], [3, 0], p=2) == pytest.approx(np.sqrt(2))
        assert vector_pnorm([2, 1], [3, 0], p=1) == pytest.approx(2.0)

    def test_p_below_one_rejected(self):
        with pytest.raises(ValueError):
            vector_pnorm([1.0], [2.0], p=0.5)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            vector_pnorm([1.0], [1.0, 2.0])


class TestPermuteRowsCols:
    def test_identity_is_noop(self):
        m = np.arange(6.0).reshape(2, 3)
        assert np.array_equal(permute_rows(m, [0, 1]), m)
        assert np.array_equal(permute_cols(m, [0, 1, 2]), m)

    def test_row_swap(self):
        m = np.array([[1.0, 2.0], [3.0, 4.0]])
        assert np.array_equal(permute_rows(m, [1, 0]), [[3.0, 4.0], [1.0, 2.0]])

    def test_inverse_restores_exactly(self):
        rng = np.random.default_rng(15)
        m = rng.normal(size=(7, 5))
        p = rng.permutation(7)
        assert np.array_equal(permute_rows(permute_rows(m, p), np.argsort(p)), m)
        q = rng.permutation(5)
        assert np.array_equal(permute_cols(permute_cols(m, q), np.argsort(q)), m)

    def test_matches_dense_matrix_action(self):
        """permute_rows(m, p) == P @ m and permute_cols(m, p) == m @ P.T
        for the dense matrix with ones at (i, p[i])."""
        rng = np.random.default_rng(16)
        m = rng.normal(size=(6, 4))
        p_rows, p_cols = rng.permutation(6), rng.permutation(4)
        np.testing.assert_array_equal(permute_rows(m, p_rows), dense_perm_matrix(p_rows) @ m)
        np.testing.assert_array_equal(permute_cols(m, p_cols), m @ dense_perm_matrix(p_cols).T)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            permute_rows(np.eye(3), [0, 1])
