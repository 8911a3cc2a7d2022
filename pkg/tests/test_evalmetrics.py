import numpy as np
import pytest

from bau.errors import EmptyGallery, NoRelevant
from bau.evalmetrics import average_precision, evaluate
from bau.geometry import l2_normalize


def unit_rows(n, d, seed):
    rng = np.random.default_rng(seed)
    return l2_normalize(rng.normal(size=(n, d)))


def oracle_evaluate(qf, gf, ql, gl):
    """Naive sort + AP definition, loops only."""
    aps, rank1, skipped = [], 0, 0
    for q in range(qf.shape[0]):
        dists = [float(np.sum((qf[q] - gf[g]) ** 2)) for g in range(gf.shape[0])]
        order = sorted(range(gf.shape[0]), key=lambda g: (dists[g], g))
        rel = [gl[g] == ql[q] for g in order]
        if not any(rel):
            skipped += 1
            continue
        hits, precisions = 0, []
        for r, flag in enumerate(rel, start=1):
            if flag:
                hits += 1
                precisions.append(hits / r)
        aps.append(sum(precisions) / len(precisions))
        rank1 += int(rel[0])
    return (
        sum(aps) / len(aps) if aps else 0.0,
        rank1 / len(aps) if aps else 0.0,
        skipped,
    )


class TestAveragePrecision:
    def test_perfect_ranking(self):
        assert average_precision([True, True, True]) == 1.0

    def test_direct_definition(self):
        assert average_precision([True, False, True]) == pytest.approx(5 / 6)

    def test_no_relevant_raises(self):
        with pytest.raises(NoRelevant):
            average_precision([False, False])


class TestEvaluate:
    def test_exact_copies_rank_first(self):
        q = unit_rows(1, 4, 0)
        gallery = np.vstack([q, unit_rows(5, 4, 1)])
        report = evaluate(q, gallery, np.array([7]), np.array([7, 1, 2, 3, 4, 5]))
        assert report.mean_ap == 1.0
        assert report.rank1 == 1.0
        assert report.num_skipped == 0

    def test_matches_bruteforce_evaluator(self):
        for seed in range(12):
            rng = np.random.default_rng(seed)
            nq, ng = 8, 32
            qf = unit_rows(nq, 6, seed + 10)
            gf = unit_rows(ng, 6, seed + 20)
            ql = rng.integers(0, 6, size=nq)
            gl = rng.integers(0, 6, size=ng)
            report = evaluate(qf, gf, ql, gl)
            want_map, want_r1, want_skip = oracle_evaluate(qf, gf, ql, gl)
            assert report.mean_ap == pytest.approx(want_map, abs=1e-12)
            assert report.rank1 == pytest.approx(want_r1, abs=1e-12)
            assert report.num_skipped == want_skip
            assert 0.0 <= report.mean_ap <= 1.0
            assert 0.0 <= report.rank1 <= 1.0

    def test_map_is_mean_of_per_query_aps(self):
        qf = unit_rows(6, 5, 3)
        gf = unit_rows(20, 5, 4)
        ql = np.arange(6) % 3
        gl = np.arange(20) % 3
        report = evaluate(qf, gf, ql, gl)
        assert report.mean_ap == pytest.approx(report.per_query_ap.mean(), abs=1e-12)

    def test_rotation_invariance(self):
        rng = np.random.default_rng(5)
        qf = unit_rows(5, 6, 6)
        gf = unit_rows(15, 6, 7)
        ql = rng.integers(0, 4, size=5)
        gl = rng.integers(0, 4, size=15)
        base = evaluate(qf, gf, ql, gl)
        q, r = np.linalg.qr(rng.normal(size=(6, 6)))
        Q = q * np.sign(np.diag(r))
        rotated = evaluate(qf @ Q.T, gf @ Q.T, ql, gl)
        assert rotated.mean_ap == pytest.approx(base.mean_ap, abs=1e-12)
        assert rotated.rank1 == base.rank1
        assert rotated.alignment_diag == pytest.approx(base.alignment_diag, abs=1e-9)
        assert rotated.uniformity_diag == pytest.approx(base.uniformity_diag, abs=1e-9)

    def test_gallery_permutation_invariance(self):
        rng = np.random.default_rng(8)
        qf = unit_rows(4, 5, 9)
        gf = unit_rows(12, 5, 10)
        ql = rng.integers(0, 3, size=4)
        gl = rng.integers(0, 3, size=12)
        base = evaluate(qf, gf, ql, gl)
        perm = rng.permutation(12)
        shuffled = evaluate(qf, gf[perm], ql, gl[perm])
        assert shuffled.mean_ap == pytest.approx(base.mean_ap, abs=1e-12)

    def test_matchless_queries_skipped_and_counted(self):
        qf = unit_rows(3, 4, 11)
        gf = unit_rows(6, 4, 12)
        ql = np.array([0, 1, 9])  # label 9 absent from gallery
        gl = np.array([0, 0, 1, 1, 2, 2])
        report = evaluate(qf, gf, ql, gl)
        assert report.num_queries == 3
        assert report.num_skipped == 1
        assert report.per_query_ap.size == 2

    def test_empty_gallery(self):
        with pytest.raises(EmptyGallery):
            evaluate(unit_rows(2, 4, 13), np.empty((0, 4)), np.array([0, 1]),
                     np.array([], dtype=int))
