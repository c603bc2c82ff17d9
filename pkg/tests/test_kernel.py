import math

import numpy as np
import pytest

from sca import kernel
from sca.embedding import EmbeddingTable
from sca.kernel import KernelSpec


RBF = KernelSpec("rbf", 1.0)
DOT = KernelSpec("dot")
COS = KernelSpec("cosine")


class TestSpec:
    def test_unknown_family_rejected(self):
        with pytest.raises(ValueError):
            KernelSpec("poly")

    def test_nonpositive_bandwidth_rejected(self):
        with pytest.raises(ValueError):
            KernelSpec("rbf", 0.0)

    def test_rbf_without_bandwidth_fails_at_eval(self):
        with pytest.raises(ValueError, match="bandwidth"):
            kernel.kernel_eval(KernelSpec("rbf"), np.ones(2), np.ones(2))


class TestEval:
    def test_rbf_zero_distance_is_one(self):
        x = np.array([0.4, -2.0, 1.0])
        assert kernel.kernel_eval(RBF, x, x) == 1.0

    def test_rbf_unit_vectors(self):
        got = kernel.kernel_eval(RBF, np.array([1.0, 0.0]), np.array([0.0, 1.0]))
        assert got == pytest.approx(math.exp(-1.0), abs=1e-12)

    def test_dot_orthogonal_is_zero(self):
        assert kernel.kernel_eval(DOT, np.array([2.0, 0.0]), np.array([0.0, 3.0])) == 0.0

    def test_cosine_zero_vector_maps_to_zero(self):
        assert kernel.kernel_eval(COS, np.zeros(3), np.ones(3)) == 0.0

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ValueError, match="mismatch"):
            kernel.kernel_eval(DOT, np.ones(3), np.ones(4))

    @pytest.mark.parametrize("spec", [RBF, DOT, COS])
    def test_symmetry(self, spec):
        rng = np.random.default_rng(8)
        for _ in range(50):
            x = rng.standard_normal(5)
            y = rng.standard_normal(5)
            assert abs(kernel.kernel_eval(spec, x, y) - kernel.kernel_eval(spec, y, x)) <= 1e-15

    def test_rbf_range(self):
        rng = np.random.default_rng(9)
        for _ in range(100):
            x = rng.standard_normal(4)
            y = rng.standard_normal(4)
            k = kernel.kernel_eval(KernelSpec("rbf", 0.7), x, y)
            assert 0.0 < k <= 1.0
            assert (k == 1.0) == bool(np.array_equal(x, y))


class TestRow:
    def test_self_batch(self):
        table = EmbeddingTable(np.array([[1.0, 2.0], [0.0, 1.0]]))
        row = kernel.kernel_row(RBF, table, 0, np.array([0]))
        assert row.tolist() == [1.0]

    def test_constant_row_for_identical_batch(self):
        table = EmbeddingTable(np.array([[1.0, 0.0], [0.5, 0.5], [0.5, 0.5], [0.5, 0.5]]))
        row = kernel.kernel_row(RBF, table, 0, np.array([1, 2, 3]))
        assert row[0] == row[1] == row[2]

    @pytest.mark.parametrize("spec", [RBF, DOT, COS])
    def test_elementwise_matches_eval(self, spec):
        rng = np.random.default_rng(10)
        table = EmbeddingTable(rng.standard_normal((12, 6)))
        for _ in range(20):
            batch = rng.integers(0, 12, size=rng.integers(1, 9))
            i = int(rng.integers(0, 12))
            row = kernel.kernel_row(spec, table, i, batch)
            expected = [kernel.kernel_eval(spec, table.vectors[i], table.vectors[j]) for j in batch]
            np.testing.assert_allclose(row, expected, rtol=0.0, atol=1e-15)

    def test_empty_batch_rejected(self):
        table = EmbeddingTable(np.ones((3, 2)))
        with pytest.raises(ValueError):
            kernel.kernel_row(DOT, table, 0, np.array([], dtype=np.int64))


class TestMedianBandwidth:
    def test_single_pair(self):
        table = EmbeddingTable(np.array([[0.0, 0.0], [2.0, 0.0]]))
        assert kernel.median_bandwidth(table) == 2.0

    def test_identical_table_floors_with_warning(self):
        table = EmbeddingTable(np.ones((5, 3)))
        with pytest.warns(RuntimeWarning):
            got = kernel.median_bandwidth(table)
        assert got == kernel.BANDWIDTH_FLOOR

    def test_full_coverage_matches_bruteforce_median(self):
        rng = np.random.default_rng(12)
        table = EmbeddingTable(rng.standard_normal((10, 4)))
        dists = []
        for i in range(10):
            for j in range(i + 1, 10):
                dists.append(float(np.linalg.norm(table.vectors[i] - table.vectors[j])))
        want = float(np.median(dists))
        got = kernel.median_bandwidth(table, sample_size=10_000)
        assert got == pytest.approx(want, rel=1e-12)

    def test_subsample_is_seeded(self):
        rng = np.random.default_rng(13)
        table = EmbeddingTable(rng.standard_normal((40, 4)))
        a = kernel.median_bandwidth(table, sample_size=50, seed=3)
        b = kernel.median_bandwidth(table, sample_size=50, seed=3)
        assert a == b

    def test_tiny_table_rejected(self):
        with pytest.raises(ValueError):
            kernel.median_bandwidth(EmbeddingTable(np.ones((1, 2))))
