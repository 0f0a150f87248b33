"""scikit-learn style front door for the full alignment pipeline.

``RprRhgtAligner`` mines reliable paths, trains both encoder stacks and
ranks candidates, exposed through the usual fit / predict / score surface
so it composes with sklearn tooling (``get_params``, ``clone``, ...).
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .data import AlignmentDataset, AlignmentSeeds
from .encoder import EncoderConfig
from .errors import DataError
from .evaluation import evaluate, fused_distance_matrix
from .mining import mine
from .training import TrainConfig, train


def check_dataset(dataset: AlignmentDataset) -> AlignmentDataset:
    """Validate the dataset bundle before fitting."""
    if not isinstance(dataset, AlignmentDataset):
        raise TypeError(f"expected an AlignmentDataset, got {type(dataset).__name__}")
    for names, kg, side in ((dataset.names1, dataset.kg1, 1),
                            (dataset.names2, dataset.kg2, 2)):
        names = np.asarray(names)
        if names.ndim != 2 or names.shape[0] != kg.num_entities:
            raise DataError(
                f"names{side} must be ({kg.num_entities}, d), got {names.shape}"
            )
        if not np.all(np.isfinite(names)):
            raise DataError(f"names{side} contains non-finite values")
    if dataset.names1.shape[1] != dataset.names2.shape[1]:
        raise DataError("name embedding dimensions differ between KGs")
    for role in ("train", "valid"):
        if role not in dataset.seeds or not dataset.seeds[role].pairs:
            raise DataError(f"dataset needs nonempty {role!r} seeds")
    return dataset


class RprRhgtAligner(BaseEstimator):
    """Entity aligner over two KGs: reliable-path mining, a heterogeneous
    graph transformer per structure, dual margin training, L1 ranking.

    Parameters mirror the pipeline knobs; ``fit`` takes an
    ``AlignmentDataset`` and ``y`` is ignored (the supervision lives in the
    dataset's seed split).
    """

    def __init__(self, layers: int = 2, heads: int = 4,
                 tau_sim: float = 0.5, tau_path: float = 20,
                 max_fanout: int = 10_000,
                 gamma_rel: float = 10.0, gamma_path: float = 10.0,
                 theta: float = 0.3, use_paths: bool = True,
                 negatives_per_pair: int = 5,
                 negative_strategy: str = "nearest",
                 negatives_refresh: int = 10,
                 epochs: int = 200, lr: float = 0.005,
                 eval_every: int = 10, patience: int = 5,
                 theta_inf: float | None = None,
                 random_state: int = 0):
        self.layers = layers
        self.heads = heads
        self.tau_sim = tau_sim
        self.tau_path = tau_path
        self.max_fanout = max_fanout
        self.gamma_rel = gamma_rel
        self.gamma_path = gamma_path
        self.theta = theta
        self.use_paths = use_paths
        self.negatives_per_pair = negatives_per_pair
        self.negative_strategy = negative_strategy
        self.negatives_refresh = negatives_refresh
        self.epochs = epochs
        self.lr = lr
        self.eval_every = eval_every
        self.patience = patience
        self.theta_inf = theta_inf
        self.random_state = random_state

    def fit(self, X: AlignmentDataset, y=None) -> "RprRhgtAligner":
        dataset = check_dataset(X)
        kg1, kg2 = dataset.kg1, dataset.kg2
        self.mining_ = None
        if self.use_paths:
            self.mining_ = mine(kg1, kg2, dataset.seeds["train"],
                                dataset.names1, dataset.names2,
                                tau_sim=self.tau_sim, tau_path=self.tau_path,
                                max_fanout=self.max_fanout)
            kg1, kg2 = self.mining_.apply(kg1, kg2)
        encoder_config = EncoderConfig(layers=self.layers, heads=self.heads,
                                       dim=dataset.names1.shape[1])
        train_config = TrainConfig(
            gamma_rel=self.gamma_rel, gamma_path=self.gamma_path,
            theta=self.theta, negatives_per_pair=self.negatives_per_pair,
            negative_strategy=self.negative_strategy,
            negatives_refresh=self.negatives_refresh,
            epochs=self.epochs, lr=self.lr, eval_every=self.eval_every,
            patience=self.patience, use_paths=self.use_paths,
            seed=self.random_state,
        )
        result = train(kg1, kg2, dataset.seeds, dataset.names1, dataset.names2,
                       encoder_config, train_config)
        self.dataset_ = dataset
        self.result_ = result
        self.rel_embeddings_ = (result.e_rel1, result.e_rel2)
        self.path_embeddings_ = (
            (result.e_path1, result.e_path2) if result.e_path1 is not None else None
        )
        self.history_ = result.history
        self.best_val_hits1_ = result.best_val_hits1
        return self

    def _check_fitted(self) -> None:
        if not hasattr(self, "result_"):
            raise RuntimeError("this aligner is not fitted yet; call fit first")

    def _theta_inf(self) -> float:
        if self.path_embeddings_ is None:
            return 0.0
        return self.theta if self.theta_inf is None else self.theta_inf

    def kneighbors(self, entity_ids=None, k: int = 1
                   ) -> tuple[np.ndarray, np.ndarray]:
        """k nearest KG2 candidates per KG1 entity: (distances, ids), each
        of shape (n_queries, k), nearest first."""
        self._check_fitted()
        if entity_ids is None:
            entity_ids = np.arange(self.rel_embeddings_[0].shape[0])
        entity_ids = np.asarray(entity_ids, dtype=np.int64)
        dist = fused_distance_matrix(self.rel_embeddings_, self.path_embeddings_,
                                     self._theta_inf(), entity_ids)
        order = np.argsort(dist, axis=1, kind="stable")[:, :k]
        return np.take_along_axis(dist, order, axis=1), order

    def predict(self, entity_ids=None) -> np.ndarray:
        """Best-match KG2 entity id per KG1 entity."""
        _, ids = self.kneighbors(entity_ids, k=1)
        return ids[:, 0]

    def score(self, X=None, y=None) -> float:
        """Test-set Hits@1 (X defaults to the fitted dataset)."""
        return self.evaluate(X).hits[1]

    def evaluate(self, X: AlignmentDataset | None = None,
                 seeds: AlignmentSeeds | None = None,
                 ks: tuple[int, ...] = (1, 5, 10),
                 candidates: str = "all"):
        self._check_fitted()
        if seeds is None:
            dataset = self.dataset_ if X is None else X
            seeds = dataset.seeds["test"]
        return evaluate(seeds, self.rel_embeddings_, self.path_embeddings_,
                        theta_inf=self._theta_inf(), ks=ks, candidates=candidates)
