"""Trainer: distances, negative sampling, hinge loss, full training loop."""

import numpy as np
import pytest
from scipy.spatial.distance import cdist

from kgalign import encoder as enc
from kgalign import training as tr
from kgalign.autodiff import Tensor
from kgalign.data import AlignmentSeeds
from kgalign.errors import DataError, NumericalError
from kgalign.mining import mine
from kgalign.training import (
    TrainConfig,
    l1_distance,
    loss,
    sample_negatives,
    train,
)

from synth import twin_dataset


def small_config(**overrides):
    defaults = dict(epochs=20, eval_every=5, patience=3, lr=0.02,
                    negatives_per_pair=2, negatives_refresh=5, use_paths=False)
    defaults.update(overrides)
    return TrainConfig(**defaults)


def mined_twin(seed=0, **kwargs):
    dataset = twin_dataset(seed=seed, **kwargs)
    result = mine(dataset.kg1, dataset.kg2, dataset.seeds["train"],
                  dataset.names1, dataset.names2, tau_sim=0.5, tau_path=3)
    kg1, kg2 = result.apply(dataset.kg1, dataset.kg2)
    dataset.kg1, dataset.kg2 = kg1, kg2
    return dataset


class TestL1Distance:
    def test_identical_rows(self):
        e = np.ones((2, 4))
        assert l1_distance(e, e, (0, 0)) == 0.0

    def test_hand_case(self):
        e1 = np.array([[0.0, 0.0]])
        e2 = np.array([[1.0, -2.0]])
        assert l1_distance(e1, e2, (0, 0)) == 3.0

    def test_matches_scalar_loop(self):
        rng = np.random.default_rng(0)
        e1 = rng.normal(size=(3, 300))
        e2 = rng.normal(size=(3, 300))
        expected = sum(abs(float(a) - float(b)) for a, b in zip(e1[1], e2[2]))
        assert l1_distance(e1, e2, (1, 2)) == pytest.approx(expected)


class TestSampleNegatives:
    def test_forced_single_corruption(self):
        seeds = AlignmentSeeds(((0, 0),), "train")
        e1 = np.array([[0.0], [1.0]])
        e2 = np.array([[0.0], [1.0]])
        negs = sample_negatives(seeds, (e1, e2), None, k=1,
                                strategy="random", epoch_seed=0)
        assert negs.rel_left.tolist() == [[1]]
        assert negs.rel_right.tolist() == [[1]]

    def test_negatives_never_hit_positives(self):
        rng = np.random.default_rng(1)
        pairs = tuple((i, i) for i in range(8))
        seeds = AlignmentSeeds(pairs, "train")
        e1 = rng.normal(size=(20, 4))
        e2 = rng.normal(size=(20, 4))
        positives = set(pairs)
        for trial in range(100):
            negs = sample_negatives(seeds, (e1, e2), (e1, e2), k=5,
                                    strategy="random", epoch_seed=trial)
            for row, (p, q) in enumerate(pairs):
                for p_neg in negs.rel_left[row]:
                    assert (int(p_neg), q) not in positives
                for q_neg in negs.rel_right[row]:
                    assert (p, int(q_neg)) not in positives
                for p_neg in negs.path_left[row]:
                    assert (int(p_neg), q) not in positives

    def test_nearest_equals_exhaustive_scan(self):
        rng = np.random.default_rng(2)
        n = 30
        pairs = tuple((i, i) for i in range(6))
        seeds = AlignmentSeeds(pairs, "train")
        e1 = rng.normal(size=(n, 5))
        e2 = rng.normal(size=(n, 5))
        negs = sample_negatives(seeds, (e1, e2), None, k=4,
                                strategy="nearest", epoch_seed=0)
        for row, (p, q) in enumerate(pairs):
            dist = cdist(e2[[q]], e1, metric="cityblock")[0]
            dist[p] = np.inf  # the positive is banned
            expected = np.argsort(dist, kind="stable")[:4]
            assert negs.rel_left[row].tolist() == expected.tolist()

    def test_deterministic_under_epoch_seed(self):
        rng = np.random.default_rng(3)
        pairs = tuple((i, i) for i in range(5))
        seeds = AlignmentSeeds(pairs, "train")
        e = rng.normal(size=(12, 3))
        a = sample_negatives(seeds, (e, e), None, k=3, strategy="random",
                             epoch_seed=7)
        b = sample_negatives(seeds, (e, e), None, k=3, strategy="random",
                             epoch_seed=7)
        assert np.array_equal(a.rel_left, b.rel_left)
        assert np.array_equal(a.rel_right, b.rel_right)

    def test_kg_too_small_for_k(self):
        seeds = AlignmentSeeds(((0, 0),), "train")
        e = np.zeros((2, 2))
        with pytest.raises(DataError, match="negatives"):
            sample_negatives(seeds, (e, e), None, k=2, strategy="random",
                             epoch_seed=0)


class TestLoss:
    def build(self, pos_d, neg_d, gamma, theta=0.0, dim=1):
        # one pair at distance pos_d, one left corruption at distance neg_d
        e1 = Tensor(np.array([[0.0], [neg_d]]))
        e2 = Tensor(np.array([[pos_d]]))
        seeds = AlignmentSeeds(((0, 0),), "train")
        negs = tr.NegativeSet(
            rel_left=np.array([[1]]),
            rel_right=np.array([[0]]),  # degenerate: re-uses the positive row
        )
        return e1, e2, seeds, negs

    def test_satisfied_hinge_is_zero(self):
        e1 = Tensor(np.array([[0.0, 0.0], [50.0, 50.0]]))
        e2 = Tensor(np.array([[0.0, 0.0], [50.0, 50.0]]))
        seeds = AlignmentSeeds(((0, 0),), "train")
        negs = tr.NegativeSet(rel_left=np.array([[1]]), rel_right=np.array([[1]]))
        config = TrainConfig(gamma_rel=10.0, use_paths=False)
        assert loss((e1, e2), None, seeds, negs, config).item() == 0.0

    def test_hand_value_nine(self):
        # pos 1, neg 2, gamma 10 -> hinge 9 on the left corruption; the
        # right corruption is collapsed onto the same value by symmetry
        e1 = Tensor(np.array([[0.0], [0.0]]))
        e2 = Tensor(np.array([[1.0], [2.0]]))
        seeds = AlignmentSeeds(((0, 0),), "train")
        negs = tr.NegativeSet(rel_left=np.array([[1]]), rel_right=np.array([[1]]))
        # left corruption: d(e1[1], e2[0]) = 1 -> 1 - 1 + 10 = 10
        # right corruption: d(e1[0], e2[1]) = 2 -> 1 - 2 + 10 = 9
        config = TrainConfig(gamma_rel=10.0, use_paths=False)
        assert loss((e1, e2), None, seeds, negs, config).item() == 19.0

    def test_three_pair_hand_sum_with_path_term(self):
        rng = np.random.default_rng(4)
        e_rel1, e_rel2 = rng.normal(size=(2, 5, 3))
        e_path1, e_path2 = rng.normal(size=(2, 5, 3))
        pairs = ((0, 0), (1, 1), (2, 2))
        seeds = AlignmentSeeds(pairs, "train")
        negs = tr.NegativeSet(
            rel_left=np.array([[3], [4], [3]]),
            rel_right=np.array([[4], [3], [4]]),
            path_left=np.array([[4], [3], [4]]),
            path_right=np.array([[3], [4], [3]]),
        )
        config = TrainConfig(gamma_rel=2.0, gamma_path=1.5, theta=0.3)

        def l1(a, b):
            return np.abs(a - b).sum()

        expected = 0.0
        for row, (p, q) in enumerate(pairs):
            pos = l1(e_rel1[p], e_rel2[q])
            expected += max(0.0, pos - l1(e_rel1[negs.rel_left[row, 0]], e_rel2[q]) + 2.0)
            expected += max(0.0, pos - l1(e_rel1[p], e_rel2[negs.rel_right[row, 0]]) + 2.0)
        for row, (p, q) in enumerate(pairs):
            pos = l1(e_path1[p], e_path2[q])
            expected += 0.3 * max(0.0, pos - l1(e_path1[negs.path_left[row, 0]], e_path2[q]) + 1.5)
            expected += 0.3 * max(0.0, pos - l1(e_path1[p], e_path2[negs.path_right[row, 0]]) + 1.5)
        got = loss((Tensor(e_rel1), Tensor(e_rel2)),
                   (Tensor(e_path1), Tensor(e_path2)),
                   seeds, negs, config).item()
        assert got == pytest.approx(expected)

    def test_loss_nonnegative(self):
        rng = np.random.default_rng(5)
        e1, e2 = Tensor(rng.normal(size=(6, 4))), Tensor(rng.normal(size=(6, 4)))
        seeds = AlignmentSeeds(((0, 0), (1, 1)), "train")
        negs = tr.NegativeSet(rel_left=np.array([[2], [3]]),
                              rel_right=np.array([[4], [5]]))
        config = TrainConfig(use_paths=False)
        assert loss((e1, e2), None, seeds, negs, config).item() >= 0.0

    def test_empty_seeds_rejected(self):
        config = TrainConfig(use_paths=False)
        with pytest.raises(DataError, match="nonempty"):
            loss((Tensor(np.zeros((1, 1))), Tensor(np.zeros((1, 1)))), None,
                 AlignmentSeeds((), "train"),
                 tr.NegativeSet(np.zeros((0, 1), dtype=int),
                                np.zeros((0, 1), dtype=int)),
                 config)


class TestTrain:
    def test_twin_reaches_perfect_validation(self):
        dataset = mined_twin(seed=0, n_entities=60, n_triples=240, dim=16,
                             split=(30, 10, 60))
        result = train(dataset.kg1, dataset.kg2, dataset.seeds,
                       dataset.names1, dataset.names2,
                       enc.EncoderConfig(layers=2, heads=4, dim=16),
                       small_config(use_paths=True, epochs=40))
        assert result.best_val_hits1 == 1.0

    def test_loss_decreases(self):
        dataset = mined_twin(seed=1, n_entities=50, n_triples=200, dim=8,
                             name_noise=0.4)
        result = train(dataset.kg1, dataset.kg2, dataset.seeds,
                       dataset.names1, dataset.names2,
                       enc.EncoderConfig(layers=2, heads=2, dim=8),
                       small_config(use_paths=True, epochs=12, eval_every=12))
        assert result.history[-1].loss < result.history[0].loss

    def test_deterministic_under_seed(self):
        for _ in range(2):
            results = []
            dataset = mined_twin(seed=2, n_entities=40, n_triples=160, dim=8)
            for _ in range(2):
                results.append(train(
                    dataset.kg1, dataset.kg2, dataset.seeds,
                    dataset.names1, dataset.names2,
                    enc.EncoderConfig(layers=1, heads=2, dim=8),
                    small_config(use_paths=True, epochs=8, eval_every=4, seed=5)))
            assert results[0].best_val_hits1 == results[1].best_val_hits1
            assert np.array_equal(results[0].e_rel1, results[1].e_rel1)
            losses0 = [r.loss for r in results[0].history]
            losses1 = [r.loss for r in results[1].history]
            assert losses0 == losses1

    def test_ablation_skips_path_computation(self, monkeypatch):
        dataset = mined_twin(seed=3, n_entities=40, n_triples=160, dim=8)
        calls = []
        original = enc.encode

        def spy(names, edges, params):
            calls.append(edges.n_types)
            return original(names, edges, params)

        monkeypatch.setattr(tr.enc, "encode", spy)
        train(dataset.kg1, dataset.kg2, dataset.seeds,
              dataset.names1, dataset.names2,
              enc.EncoderConfig(layers=1, heads=2, dim=8),
              small_config(use_paths=False, epochs=4, eval_every=2))
        # only the two relation encodes per epoch/eval, never the path stack
        assert all(n == dataset.kg1.num_relations for n in calls)

    def test_theta_zero_matches_ablation_rel_trajectory(self):
        dataset = mined_twin(seed=4, n_entities=40, n_triples=160, dim=8)
        with_paths = train(dataset.kg1, dataset.kg2, dataset.seeds,
                           dataset.names1, dataset.names2,
                           enc.EncoderConfig(layers=1, heads=2, dim=8),
                           small_config(use_paths=True, theta=0.0, epochs=6,
                                        eval_every=3, negative_strategy="random"))
        without = train(dataset.kg1, dataset.kg2, dataset.seeds,
                        dataset.names1, dataset.names2,
                        enc.EncoderConfig(layers=1, heads=2, dim=8),
                        small_config(use_paths=False, epochs=6, eval_every=3,
                                     negative_strategy="random"))
        rel_a = {k: v for k, v in with_paths.rel_params.values().items()}
        rel_b = without.rel_params.values()
        for key in rel_b:
            assert np.array_equal(rel_a[key], rel_b[key]), key

    def test_every_parameter_gets_gradient(self):
        dataset = mined_twin(seed=5, n_entities=40, n_triples=200, dim=8)
        config = small_config(use_paths=True, epochs=1, eval_every=1)
        encoder_config = enc.EncoderConfig(layers=2, heads=2, dim=8)
        rng = np.random.default_rng(config.seed)
        rel_params = enc.init_params(encoder_config, rng)
        path_params = enc.init_params(encoder_config, rng)
        rel_edges1 = enc.EdgeList.from_triples(
            dataset.kg1.rel_triples, dataset.kg1.num_entities,
            dataset.kg1.num_relations)
        rel_edges2 = enc.EdgeList.from_triples(
            dataset.kg2.rel_triples, dataset.kg2.num_entities,
            dataset.kg2.num_relations)
        path_edges1 = enc.EdgeList.from_triples(
            dataset.kg1.path_triples, dataset.kg1.num_entities,
            dataset.kg1.num_paths)
        path_edges2 = enc.EdgeList.from_triples(
            dataset.kg2.path_triples, dataset.kg2.num_entities,
            dataset.kg2.num_paths)
        e_rel1 = enc.encode(dataset.names1, rel_edges1, rel_params)
        e_rel2 = enc.encode(dataset.names2, rel_edges2, rel_params)
        e_path1 = enc.encode(dataset.names1, path_edges1, path_params)
        e_path2 = enc.encode(dataset.names2, path_edges2, path_params)
        negs = sample_negatives(dataset.seeds["train"],
                                (e_rel1.data, e_rel2.data),
                                (e_path1.data, e_path2.data),
                                k=3, strategy="nearest", epoch_seed=0)
        total = loss((e_rel1, e_rel2), (e_path1, e_path2),
                     dataset.seeds["train"], negs, config)
        total.backward()
        for name, tensor in {**rel_params.tensors("rel"),
                             **path_params.tensors("path")}.items():
            assert tensor.grad is not None, f"{name} got no gradient"
            assert np.abs(tensor.grad).max() > 0.0, f"{name} gradient is zero"

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_aborts(self):
        dataset = mined_twin(seed=6, n_entities=30, n_triples=120, dim=8)
        config = small_config(use_paths=False, epochs=50, lr=1e200)
        with pytest.raises(NumericalError, match="diverged"):
            train(dataset.kg1, dataset.kg2, dataset.seeds,
                  dataset.names1, dataset.names2,
                  enc.EncoderConfig(layers=1, heads=2, dim=8), config)

    def test_paths_required_when_enabled(self):
        dataset = twin_dataset(seed=7, n_entities=30, n_triples=120, dim=8)
        with pytest.raises(DataError, match="no mined paths"):
            train(dataset.kg1, dataset.kg2, dataset.seeds,
                  dataset.names1, dataset.names2,
                  enc.EncoderConfig(layers=1, heads=2, dim=8),
                  small_config(use_paths=True))
