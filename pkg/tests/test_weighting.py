import numpy as np
import pytest

from bau.errors import KTooLarge, NoPositivePairs
from bau.geometry import l2_normalize
from bau.weighting import (
    jaccard_weight,
    k_reciprocal_sets,
    pair_weights,
    uniform_pair_set,
)


# ---------------------------------------------------------------------------
# brute-force oracles, written from the definitions with plain loops/sets


def oracle_k_reciprocal(pool, k):
    m = pool.shape[0]
    sqd = [[float(np.sum((pool[i] - pool[j]) ** 2)) for j in range(m)] for i in range(m)]
    knn = []
    for i in range(m):
        others = sorted((j for j in range(m) if j != i), key=lambda j: (sqd[i][j], j))
        knn.append(set(others[:k]))
    return [set(j for j in knn[i] if i in knn[j]) for i in range(m)]


def oracle_pair_weights(orig, aug, labels, k):
    B = orig.shape[0]
    R_orig = oracle_k_reciprocal(orig, k)
    R_aug = oracle_k_reciprocal(aug, k)
    pairs, weights = [], []
    for i in range(B):
        for j in range(B):
            if labels[i] == labels[j]:
                a, b = R_aug[i], R_orig[j]
                w = 0.0 if not (a | b) else len(a & b) / len(a | b)
                pairs.append((i, j))
                weights.append(w)
    total = sum(weights)
    if total < 1e-12:
        norm = [1.0 / len(weights)] * len(weights)
    else:
        norm = [w / total for w in weights]
    return pairs, weights, norm


def random_features(n, d, seed):
    rng = np.random.default_rng(seed)
    return l2_normalize(rng.normal(size=(n, d)))


class TestKReciprocalSets:
    def test_two_identical_points_mutual(self):
        pool = np.array([[1.0, 0.0], [1.0, 0.0]])
        R = k_reciprocal_sets(pool, 1)
        assert list(R[0]) == [1] and list(R[1]) == [0]

    def test_non_reciprocal_exclusion(self):
        # Point 3 sits far from a tight cluster {0,1,2}; its nearest
        # neighbor is in the cluster but the cluster reciprocates among
        # itself, so R(3) is empty at k=1.
        theta = np.array([0.0, 0.02, 0.04, 2.5])
        pool = np.stack([np.cos(theta), np.sin(theta)], axis=1)
        R = k_reciprocal_sets(pool, 1)
        assert list(R[3]) == []
        assert list(R[0]) == [1] and list(R[1]) == [0]

    def test_six_angles_match_oracle(self):
        deg = np.array([0.0, 10.0, 20.0, 180.0, 190.0, 200.0])
        theta = np.deg2rad(deg)
        pool = np.stack([np.cos(theta), np.sin(theta)], axis=1)
        R = k_reciprocal_sets(pool, 2)
        expected = oracle_k_reciprocal(pool, 2)
        assert [set(map(int, r)) for r in R] == expected

    def test_random_pools_match_oracle(self):
        for seed in range(10):
            rng = np.random.default_rng(seed)
            m = int(rng.integers(4, 20))
            k = int(rng.integers(1, m))
            pool = random_features(m, 4, seed + 100)
            R = k_reciprocal_sets(pool, k)
            assert [set(map(int, r)) for r in R] == oracle_k_reciprocal(pool, k)
            assert all(len(r) <= k for r in R)

    def test_k_too_large(self):
        with pytest.raises(KTooLarge):
            k_reciprocal_sets(random_features(4, 3, 0), 4)


class TestJaccardWeight:
    def test_identical_nonempty_is_one(self):
        assert jaccard_weight({1, 2, 3}, {1, 2, 3}) == 1.0

    def test_disjoint_nonempty_is_zero(self):
        assert jaccard_weight({1, 2}, {3, 4}) == 0.0

    def test_direct_definition(self):
        assert jaccard_weight({1, 2, 3, 4}, {3, 4, 5, 6}) == pytest.approx(1 / 3)

    def test_both_empty_is_zero(self):
        assert jaccard_weight(set(), set()) == 0.0

    def test_symmetry(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            a = set(map(int, rng.integers(0, 12, size=rng.integers(0, 6))))
            b = set(map(int, rng.integers(0, 12, size=rng.integers(0, 6))))
            assert jaccard_weight(a, b) == jaccard_weight(b, a)


class TestPairWeights:
    def test_identical_views_all_weights_one(self):
        # aug == orig means both views see identical neighborhoods, so
        # every pair weight is exactly 1 and normalization gives 1/B.
        B = 8
        orig = random_features(B, 6, seed=5)
        labels = np.arange(B)
        ps = pair_weights(orig, orig.copy(), labels, k=4)
        assert len(ps) == B
        assert (ps.raw_weights == 1.0).all()
        np.testing.assert_allclose(ps.normalized_weights, np.full(B, 1.0 / B))

    def test_normalized_weights_sum_to_one(self):
        for seed in range(8):
            rng = np.random.default_rng(seed)
            B = int(rng.integers(4, 16))
            labels = rng.integers(0, max(2, B // 2), size=B)
            orig = random_features(B, 5, seed)
            aug = l2_normalize(orig + 0.1 * rng.normal(size=orig.shape))
            ps = pair_weights(orig, aug, labels, k=3)
            assert abs(ps.normalized_weights.sum() - 1.0) <= 1e-9
            assert (ps.raw_weights >= 0).all() and (ps.raw_weights <= 1).all()

    def test_matches_oracle(self):
        for seed in range(25):
            rng = np.random.default_rng(1000 + seed)
            B = int(rng.integers(3, 17))
            k = int(rng.integers(1, B))
            labels = rng.integers(0, max(2, B // 2), size=B)
            orig = random_features(B, 4, seed=2000 + seed)
            aug = l2_normalize(orig + 0.2 * rng.normal(size=orig.shape))
            ps = pair_weights(orig, aug, labels, k=k)
            pairs, weights, norm = oracle_pair_weights(orig, aug, labels, k)
            assert [tuple(p) for p in ps.pairs] == pairs
            np.testing.assert_array_equal(ps.raw_weights, weights)
            np.testing.assert_allclose(ps.normalized_weights, norm, atol=1e-15)

    def test_corrupted_row_gets_lower_weight(self):
        # Clustered classes; one augmented row is sent antipodal to its
        # whole class. Its reliability must drop strictly below every
        # clean pair weight.
        B, k = 8, 2
        labels = np.repeat(np.arange(4), 2)
        rng = np.random.default_rng(42)
        centers = l2_normalize(rng.normal(size=(4, 6)))
        orig = l2_normalize(centers[labels] + 0.05 * rng.normal(size=(B, 6)))
        aug = l2_normalize(orig + 0.02 * rng.normal(size=orig.shape))
        aug[3] = -orig[2]
        ps = pair_weights(orig, aug, labels, k)
        pairs, weights, _ = oracle_pair_weights(orig, aug, labels, k)
        np.testing.assert_array_equal(ps.raw_weights, weights)
        w = {tuple(p): wt for p, wt in zip(ps.pairs, ps.raw_weights)}
        corrupted = max(w[(3, 2)], w[(3, 3)])
        clean = min(w[(i, i)] for i in range(B) if i != 3)
        assert corrupted < clean

    def test_zero_sum_falls_back_to_uniform(self):
        # Augmentation permutes the neighborhood structure so that every
        # pair's reciprocal sets are disjoint at k=1: the weights all
        # vanish and normalization falls back to uniform.
        def ring(degrees):
            theta = np.deg2rad(np.asarray(degrees, dtype=float))
            return np.stack([np.cos(theta), np.sin(theta)], axis=1)

        orig = ring([0.0, 5.0, 120.0])
        aug = ring([0.0, 120.0, 5.0])
        labels = np.arange(3)
        ps = pair_weights(orig, aug, labels, k=1)
        assert ps.raw_weights.sum() == 0.0
        np.testing.assert_allclose(ps.normalized_weights, np.full(3, 1 / 3))

    def test_no_positive_pairs_raises(self):
        orig = random_features(3, 4, seed=0)
        with pytest.raises(NoPositivePairs):
            uniform_pair_set(np.array([], dtype=int))
        with pytest.raises(NoPositivePairs):
            pair_weights(orig[:0], orig[:0], np.array([], dtype=int), k=1)

    def test_monotone_corruption_response(self):
        # Statistical contract: averaged over many batches, pushing one
        # augmented sample further from its original must not raise its
        # mean weight.
        severities = [0.0, 0.4, 0.8, 1.2]
        means = []
        for s in severities:
            acc = []
            for seed in range(20):
                rng = np.random.default_rng(7000 + seed)
                B = 12
                labels = np.repeat(np.arange(4), 3)
                orig = random_features(B, 6, seed=300 + seed)
                aug = l2_normalize(orig + 0.05 * rng.normal(size=orig.shape))
                direction = rng.normal(size=6)
                aug[0] = l2_normalize((orig[0] + s * direction)[None, :])[0]
                ps = pair_weights(orig, aug, labels, k=4)
                sel = ps.pairs[:, 0] == 0
                acc.append(ps.raw_weights[sel].mean())
            means.append(np.mean(acc))
        assert all(a >= b - 1e-12 for a, b in zip(means, means[1:]))
