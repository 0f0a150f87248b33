"""Ranking metrics, distance fusion, harder splits, name-only baseline."""

import numpy as np
import pytest

from kgalign.data import AlignmentSeeds
from kgalign.errors import DataError
from kgalign.evaluation import (
    evaluate,
    fused_distance,
    make_harder_split,
    name_only_baseline,
)

from oracles import rank_by_full_sort


def seeds_of(pairs):
    return AlignmentSeeds(tuple(pairs), "test")


class TestFusedDistance:
    def test_theta_zero_is_rel_only(self):
        rng = np.random.default_rng(0)
        rel = (rng.normal(size=(3, 4)), rng.normal(size=(3, 4)))
        path = (rng.normal(size=(3, 4)), rng.normal(size=(3, 4)))
        d = fused_distance(rel, path, 0.0, 1, 2)
        assert d == pytest.approx(np.abs(rel[0][1] - rel[1][2]).sum())

    def test_weighted_sum(self):
        rel = (np.array([[0.0]]), np.array([[2.0]]))
        path = (np.array([[0.0]]), np.array([[10.0]]))
        assert fused_distance(rel, path, 0.3, 0, 0) == pytest.approx(5.0)

    def test_missing_paths_force_zero_weight(self):
        rel = (np.array([[0.0]]), np.array([[2.0]]))
        assert fused_distance(rel, None, 0.3, 0, 0) == 2.0

    def test_argmin_matches_exhaustive_scan(self):
        rng = np.random.default_rng(1)
        rel = (rng.normal(size=(20, 6)), rng.normal(size=(20, 6)))
        path = (rng.normal(size=(20, 6)), rng.normal(size=(20, 6)))
        for i in range(20):
            scalar = [fused_distance(rel, path, 0.3, i, j) for j in range(20)]
            result = evaluate(seeds_of([(i, int(np.argmin(scalar)))]),
                              rel, path, theta_inf=0.3, ks=(1,))
            assert result.hits[1] == 1.0


class TestEvaluate:
    def test_perfect_embeddings(self):
        rng = np.random.default_rng(2)
        e = rng.normal(size=(10, 4))
        result = evaluate(seeds_of([(i, i) for i in range(10)]), (e, e.copy()))
        assert result.hits[1] == 1.0
        assert result.mrr == 1.0

    def test_always_second_place(self):
        # candidate 0 sits at distance 0.5 from every query; the true match
        # is at distance 1, everyone else at 9
        n = 8
        e1 = np.zeros((n, 2))
        e2 = np.full((n, 2), 4.5)
        e2[0] = [0.5, 0.0]
        for i in range(1, n):
            e2[i] = [1.0, 0.0]
        pairs = [(i, i) for i in range(1, n)]
        # distances: d(i, 0) = 0.5, d(i, true) = 1.0, others 1.0 but tie-broken
        result = evaluate(seeds_of(pairs), (e1, e2), ks=(1, 5, 10))
        assert result.hits[1] == 0.0
        assert np.all(result.ranks >= 2)

    def test_constructed_rank_two(self):
        # exactly one better candidate per query: hits@1=0, hits@5=1, mrr=0.5
        e1 = np.array([[0.0], [0.0]])
        e2 = np.array([[0.1], [0.2], [0.3]])
        # true matches are candidates 1 and 2; candidate 0 is always closer...
        result = evaluate(seeds_of([(0, 1)]), (e1, e2), ks=(1, 5))
        assert result.ranks.tolist() == [2]
        assert result.hits[1] == 0.0
        assert result.hits[5] == 1.0
        assert result.mrr == 0.5

    def test_mean_rank_of_random_embeddings(self):
        rng = np.random.default_rng(3)
        trials = []
        for _ in range(10):
            e1 = rng.normal(size=(100, 8))
            e2 = rng.normal(size=(100, 8))
            result = evaluate(seeds_of([(i, i) for i in range(100)]), (e1, e2))
            trials.append(result.ranks.mean())
        assert abs(np.mean(trials) - 50.5) < 3.0

    def test_rank_equals_full_sort_reference(self):
        rng = np.random.default_rng(4)
        e1 = rng.integers(0, 3, size=(12, 4)).astype(float)  # many exact ties
        e2 = rng.integers(0, 3, size=(15, 4)).astype(float)
        pairs = [(i, i) for i in range(12)]
        result = evaluate(seeds_of(pairs), (e1, e2))
        for row, (i, j) in enumerate(pairs):
            distances = np.abs(e1[i] - e2).sum(axis=1)
            expected = rank_by_full_sort(distances.tolist(), list(range(15)), j)
            assert result.ranks[row] == expected

    def test_hits_monotone_and_mrr_bound(self):
        rng = np.random.default_rng(5)
        e1 = rng.normal(size=(40, 4))
        e2 = rng.normal(size=(40, 4))
        result = evaluate(seeds_of([(i, i) for i in range(40)]), (e1, e2),
                          ks=(1, 5, 10))
        assert result.hits[1] <= result.hits[5] <= result.hits[10]
        bound = result.hits[1] + (1.0 - result.hits[1]) / 40.0
        assert result.mrr >= bound - 1e-12

    def test_pair_order_is_irrelevant(self):
        rng = np.random.default_rng(6)
        e1 = rng.normal(size=(20, 4))
        e2 = rng.normal(size=(20, 4))
        pairs = [(i, i) for i in range(20)]
        forward = evaluate(seeds_of(pairs), (e1, e2))
        backward = evaluate(seeds_of(pairs[::-1]), (e1, e2))
        assert sorted(forward.ranks) == sorted(backward.ranks)
        assert forward.hits == backward.hits
        assert forward.mrr == pytest.approx(backward.mrr)

    def test_candidate_restriction_to_test_tails(self):
        rng = np.random.default_rng(7)
        e1 = rng.normal(size=(30, 4))
        e2 = rng.normal(size=(30, 4))
        pairs = [(i, i) for i in range(0, 30, 3)]
        restricted = evaluate(seeds_of(pairs), (e1, e2), candidates="test")
        assert restricted.n_candidates == len(pairs)
        full = evaluate(seeds_of(pairs), (e1, e2), candidates="all")
        assert np.all(restricted.ranks <= full.ranks)

    def test_empty_test_rejected(self):
        with pytest.raises(DataError, match="nonempty"):
            evaluate(seeds_of([]), (np.zeros((1, 1)), np.zeros((1, 1))))


class TestHarderSplit:
    def test_fraction_one_is_identity(self):
        rng = np.random.default_rng(8)
        names = rng.normal(size=(6, 4))
        links = [(i, i) for i in range(6)]
        harder = make_harder_split(links, names, names, 1.0)
        assert sorted(harder) == links

    def test_keeps_least_similar_half(self):
        names1 = np.eye(4)
        # cosine sims against names1 rows: 0.1, 0.4, 0.7, 0.9 via mixtures
        def mix(i, s):
            v = s * names1[i] + np.sqrt(1 - s * s) * np.roll(names1[i], 1)
            return v

        names2 = np.vstack([mix(0, 0.1), mix(1, 0.4), mix(2, 0.7), mix(3, 0.9)])
        links = [(0, 0), (1, 1), (2, 2), (3, 3)]
        harder = make_harder_split(links, names1, names2, 0.5)
        assert sorted(harder) == [(0, 0), (1, 1)]

    def test_harder_name_baseline_does_not_improve(self):
        rng = np.random.default_rng(9)
        n = 60
        names1 = rng.normal(size=(n, 8))
        names1 /= np.linalg.norm(names1, axis=1, keepdims=True)
        noise = rng.normal(size=(n, 8))
        names2 = names1 + 0.9 * noise
        names2 /= np.linalg.norm(names2, axis=1, keepdims=True)
        links = [(i, i) for i in range(n)]
        harder = make_harder_split(links, names1, names2, 0.5)
        regular = name_only_baseline(seeds_of(links), names1, names2, ks=(1,))
        hard = name_only_baseline(seeds_of(harder), names1, names2, ks=(1,))
        assert hard.hits[1] <= regular.hits[1]

    def test_bad_fraction(self):
        with pytest.raises(ValueError, match="fraction"):
            make_harder_split([(0, 0)], np.eye(1), np.eye(1), 0.0)


class TestNameOnlyBaseline:
    def test_identical_names_are_perfect(self):
        rng = np.random.default_rng(10)
        names = rng.normal(size=(15, 6))
        result = name_only_baseline(seeds_of([(i, i) for i in range(15)]),
                                    names, names.copy(), ks=(1,))
        assert result.hits[1] == 1.0

    def test_random_names_hit_at_chance(self):
        rng = np.random.default_rng(11)
        hits = []
        for _ in range(30):
            names1 = rng.normal(size=(50, 4))
            names2 = rng.normal(size=(50, 4))
            result = name_only_baseline(
                seeds_of([(i, i) for i in range(50)]), names1, names2, ks=(1,))
            hits.append(result.hits[1])
        assert np.mean(hits) == pytest.approx(1.0 / 50.0, abs=0.02)

    def test_equals_evaluate_on_names(self):
        rng = np.random.default_rng(12)
        names1 = rng.normal(size=(10, 4))
        names2 = rng.normal(size=(10, 4))
        pairs = seeds_of([(i, i) for i in range(10)])
        direct = evaluate(pairs, (names1, names2), None, theta_inf=0.0)
        baseline = name_only_baseline(pairs, names1, names2)
        assert np.array_equal(direct.ranks, baseline.ranks)
        assert direct.as_dict() == baseline.as_dict()
