import numpy as np
import pytest
import scipy.sparse as sp

from flowseg.affinity import (
    NEIGHBOR_OFFSETS,
    build_transition,
    fuse,
    global_affinity,
    local_affinity,
    neighbor_pairs,
)
from flowseg.core import (
    FeatureMap,
    InvalidInputError,
    SegmentationConfig,
    StochasticMatrix,
    row_normalize,
)
from flowseg.synthetic import gen_blob_features


def fmap(tokens, h, w):
    return FeatureMap.from_tokens(np.asarray(tokens, dtype=float), h, w)


class TestGlobalAffinity:
    def test_orthogonal_tokens(self):
        a = global_affinity(fmap([[1, 0], [0, 1]], 1, 2))
        np.testing.assert_allclose(a, np.eye(2))

    def test_hand_inner_products(self):
        a = global_affinity(fmap([[1, 1], [2, 2]], 1, 2))
        np.testing.assert_allclose(a, [[2, 4], [4, 8]])

    def test_negative_clamps_to_zero(self):
        a = global_affinity(fmap([[1, 0], [-1, 0]], 1, 2))
        np.testing.assert_allclose(a, np.eye(2))

    def test_exactly_symmetric(self):
        rng = np.random.default_rng(0)
        f = fmap(rng.standard_normal((24, 7)), 4, 6)
        a = global_affinity(f)
        assert np.array_equal(a, a.T)


class TestNeighborhood:
    def test_offsets(self):
        assert len(NEIGHBOR_OFFSETS) == 8
        assert (0, 0) not in NEIGHBOR_OFFSETS

    def test_degree_counts(self):
        src, _ = neighbor_pairs(3, 3)
        degrees = np.bincount(src, minlength=9)
        # corners 3, edges 5, center 8 for a 3x3 grid
        np.testing.assert_array_equal(degrees.reshape(3, 3),
                                      [[3, 5, 3], [5, 8, 5], [3, 5, 3]])

    def test_no_wraparound(self):
        src, dst = neighbor_pairs(2, 2)
        assert len(src) == 12  # each of 4 corner nodes has 3 neighbors
        assert np.all(src != dst)


class TestLocalAffinity:
    def test_identical_vectors(self):
        a = local_affinity(fmap([[1, 1], [1, 1]], 1, 2), floor=0.01).toarray()
        np.testing.assert_allclose(a, [[1, 1.01], [1.01, 1]])

    def test_orthogonal_floor_only(self):
        a = local_affinity(fmap([[1, 0], [0, 1]], 1, 2), floor=0.01).toarray()
        np.testing.assert_allclose(a, [[1, 0.01], [0.01, 1]])

    def test_center_node_has_eight_neighbors(self):
        rng = np.random.default_rng(1)
        f = fmap(rng.standard_normal((9, 5)), 3, 3)
        a = local_affinity(f, floor=1e-6).toarray()
        center = a[4]
        assert np.count_nonzero(center) == 9  # diagonal + 8 neighbors
        assert center[4] == 1.0

    def test_zero_norm_token_uses_floor(self):
        a = local_affinity(fmap([[0, 0], [1, 0]], 1, 2), floor=0.5).toarray()
        np.testing.assert_allclose(a, [[1, 0.5], [0.5, 1]])

    def test_sparsity_pattern_independent_of_features(self):
        rng = np.random.default_rng(2)
        f1 = fmap(rng.standard_normal((12, 3)), 3, 4)
        f2 = fmap(rng.standard_normal((12, 3)), 3, 4)
        a1 = local_affinity(f1, floor=1e-6)
        a2 = local_affinity(f2, floor=1e-6)
        np.testing.assert_array_equal(a1.indices, a2.indices)
        np.testing.assert_array_equal(a1.indptr, a2.indptr)


class TestFuse:
    def setup_method(self):
        self.g = StochasticMatrix(np.eye(2))
        self.l = StochasticMatrix(np.full((2, 2), 0.5))

    def test_beta_zero_is_local(self):
        np.testing.assert_array_equal(fuse(self.g, self.l, 0.0).to_dense(),
                                      self.l.to_dense())

    def test_beta_one_is_global(self):
        np.testing.assert_array_equal(fuse(self.g, self.l, 1.0).to_dense(),
                                      self.g.to_dense())

    def test_hand_convex_combination(self):
        out = fuse(self.g, self.l, 0.5).to_dense()
        np.testing.assert_allclose(out, [[0.75, 0.25], [0.25, 0.75]])

    def test_affine_in_beta(self):
        rng = np.random.default_rng(3)
        g = row_normalize(rng.uniform(0, 1, (5, 5)))
        l = row_normalize(rng.uniform(0, 1, (5, 5)))
        beta = 0.37
        out = fuse(g, l, beta).to_dense()
        np.testing.assert_array_equal(
            out, beta * g.to_dense() + (1 - beta) * l.to_dense())

    def test_rejects_bad_beta(self):
        with pytest.raises(InvalidInputError):
            fuse(self.g, self.l, 1.1)

    def test_rejects_mismatch(self):
        with pytest.raises(InvalidInputError):
            fuse(self.g, StochasticMatrix(np.eye(3)), 0.5)


class TestBuildTransition:
    def test_beta_zero_equals_normalized_local(self):
        rng = np.random.default_rng(4)
        f = fmap(rng.standard_normal((12, 6)), 3, 4)
        cfg = SegmentationConfig(beta=0.0)
        s = build_transition(f, cfg)
        expected = row_normalize(local_affinity(f, cfg.affinity_floor))
        np.testing.assert_allclose(s.to_dense(), expected.to_dense(),
                                   rtol=0, atol=1e-15)

    def test_two_blob_row_mass_dominance(self):
        f, gt = gen_blob_features(6, 6, 8, "halves", noise=0.05, seed=7)
        s = build_transition(f, SegmentationConfig()).to_dense()
        same = gt.flat()[:, None] == gt.flat()[None, :]
        for i in range(s.shape[0]):
            assert s[i, same[i]].sum() >= s[i, ~same[i]].sum()

    def test_matches_hand_composed_pipeline(self):
        f = fmap([[1, 1], [2, 2]], 1, 2)
        cfg = SegmentationConfig(beta=0.5, affinity_floor=0.01)
        s = build_transition(f, cfg).to_dense()
        # compose the three hand examples independently
        g = np.array([[2.0, 4.0], [4.0, 8.0]])
        g = g / g.sum(axis=1, keepdims=True)
        l = np.array([[1.0, 1.01], [1.01, 1.0]])
        l = l / l.sum(axis=1, keepdims=True)
        np.testing.assert_allclose(s, 0.5 * g + 0.5 * l, rtol=0, atol=1e-15)

    def test_rows_stochastic_and_in_unit_interval(self):
        rng = np.random.default_rng(5)
        f = fmap(rng.standard_normal((20, 4)), 4, 5)
        s = build_transition(f, SegmentationConfig()).to_dense()
        np.testing.assert_allclose(s.sum(axis=1), 1.0, rtol=0, atol=1e-9)
        assert s.min() >= 0.0 and s.max() <= 1.0

    def test_sparse_storage_matches_dense(self):
        rng = np.random.default_rng(6)
        f = fmap(rng.uniform(0.1, 1.0, (16, 4)), 4, 4)
        dense = build_transition(f, SegmentationConfig(storage_mode="dense"))
        sparse = build_transition(f, SegmentationConfig(storage_mode="sparse"))
        assert sparse.storage == "sparse"
        np.testing.assert_allclose(sparse.to_dense(), dense.to_dense(),
                                   rtol=0, atol=1e-10)
