"""Margin-based dual-loss training over relation- and path-based embeddings.

Both KGs are encoded by one shared relation stack and (unless the path
channel is disabled) one shared path stack. Each epoch runs a full-batch
hinge loss over all training seeds against per-positive negative sets,
followed by one Adam step. Validation Hits@1 under the fused distance
drives early stopping.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from . import autodiff as ad
from . import encoder as enc
from .autodiff import Adam, Tensor
from .data import AlignmentSeeds, KnowledgeGraph
from .errors import DataError, NumericalError
from .evaluation import evaluate

logger = logging.getLogger(__name__)

_CHANNEL_IDS = {"rel": 0, "path": 1}


@dataclass
class TrainConfig:
    gamma_rel: float = 10.0
    gamma_path: float = 10.0
    theta: float = 0.3
    negatives_per_pair: int = 5
    negative_strategy: str = "nearest"  # or "random"
    negatives_refresh: int = 10
    epochs: int = 200
    lr: float = 0.005
    eval_every: int = 10
    patience: int = 5
    use_paths: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.gamma_rel <= 0 or self.gamma_path <= 0:
            raise ValueError("margins must be positive")
        if self.theta < 0:
            raise ValueError("theta must be >= 0")
        if self.negatives_per_pair < 1:
            raise ValueError("negatives_per_pair must be >= 1")
        if self.negative_strategy not in ("random", "nearest"):
            raise ValueError(f"unknown negative strategy {self.negative_strategy!r}")
        if self.epochs < 1 or self.eval_every < 1 or self.patience < 1:
            raise ValueError("epochs, eval_every and patience must be >= 1")


@dataclass
class NegativeSet:
    """Per-positive corrupted entities, (n_pairs, k) each: ``left`` arrays
    replace the KG1 side, ``right`` arrays the KG2 side."""

    rel_left: np.ndarray
    rel_right: np.ndarray
    path_left: np.ndarray | None = None
    path_right: np.ndarray | None = None


def l1_distance(emb1: np.ndarray, emb2: np.ndarray,
                pair: tuple[int, int]) -> float:
    """Manhattan distance between one KG1 row and one KG2 row."""
    i, j = pair
    return float(np.abs(emb1[i] - emb2[j]).sum())


def _corruptions_random(rng: np.random.Generator, n_source: int,
                        anchors: np.ndarray, banned: dict[int, set[int]],
                        k: int) -> np.ndarray:
    out = np.empty((anchors.size, k), dtype=np.int64)
    for row, anchor in enumerate(anchors):
        blocked = banned.get(int(anchor), set())
        allowed = np.array(
            [e for e in range(n_source) if e not in blocked], dtype=np.int64
        )
        if allowed.size < k:
            raise DataError(
                f"need {k} negatives but only {allowed.size} candidate entities"
            )
        out[row] = rng.choice(allowed, size=k, replace=False)
    return out


def _corruptions_nearest(source_emb: np.ndarray, anchor_emb: np.ndarray,
                         anchors: np.ndarray, banned: dict[int, set[int]],
                         k: int, block: int = 512) -> np.ndarray:
    if source_emb.shape[0] - 1 < k:
        raise DataError(
            f"need {k} negatives but only {source_emb.shape[0] - 1} candidate entities"
        )
    out = np.empty((anchors.size, k), dtype=np.int64)
    for start in range(0, anchors.size, block):
        stop = min(start + block, anchors.size)
        dist = cdist(anchor_emb[start:stop], source_emb, metric="cityblock")
        for row in range(start, stop):
            d = dist[row - start]
            for e in banned.get(int(anchors[row]), ()):  # positives never sampled
                d[e] = np.inf
            order = np.argsort(d, kind="stable")
            out[row] = order[:k]
    return out


def sample_negatives(seeds: AlignmentSeeds, rel_emb: tuple[np.ndarray, np.ndarray],
                     path_emb: tuple[np.ndarray, np.ndarray] | None,
                     k: int, strategy: str, epoch_seed: int,
                     positives: set[tuple[int, int]] | None = None) -> NegativeSet:
    """Draw k corruptions per positive and per side.

    ``random`` draws uniformly (deterministic under ``epoch_seed``, with
    independent streams for the two channels); ``nearest`` takes the k
    closest non-positive entities under the channel's current embeddings.
    """
    if positives is None:
        positives = set(seeds.pairs)
    left = seeds.left()
    right = seeds.right()
    banned_for_right: dict[int, set[int]] = {}  # right anchor -> banned KG1 ids
    banned_for_left: dict[int, set[int]] = {}
    for p, q in positives:
        banned_for_right.setdefault(q, set()).add(p)
        banned_for_left.setdefault(p, set()).add(q)

    def channel(emb: tuple[np.ndarray, np.ndarray], name: str):
        e1, e2 = emb
        if strategy == "random":
            rng = np.random.default_rng([epoch_seed, _CHANNEL_IDS[name]])
            lneg = _corruptions_random(rng, e1.shape[0], right, banned_for_right, k)
            rneg = _corruptions_random(rng, e2.shape[0], left, banned_for_left, k)
        else:
            lneg = _corruptions_nearest(e1, e2[right], right, banned_for_right, k)
            rneg = _corruptions_nearest(e2, e1[left], left, banned_for_left, k)
        return lneg, rneg

    rel_left, rel_right = channel(rel_emb, "rel")
    if path_emb is None:
        return NegativeSet(rel_left, rel_right)
    path_left, path_right = channel(path_emb, "path")
    return NegativeSet(rel_left, rel_right, path_left, path_right)


def _channel_loss(e1: Tensor, e2: Tensor, left: np.ndarray, right: np.ndarray,
                  neg_left: np.ndarray, neg_right: np.ndarray,
                  gamma: float) -> Tensor:
    n, k = neg_left.shape
    pos = ad.l1_distance_rows(ad.gather_rows(e1, left), ad.gather_rows(e2, right))
    rep = np.repeat(np.arange(n), k)
    pos_rep = ad.gather_rows(pos, rep)
    d_negl = ad.l1_distance_rows(
        ad.gather_rows(e1, neg_left.ravel()), ad.gather_rows(e2, right[rep])
    )
    d_negr = ad.l1_distance_rows(
        ad.gather_rows(e1, left[rep]), ad.gather_rows(e2, neg_right.ravel())
    )
    hinge_l = ad.relu(ad.shift(ad.sub(pos_rep, d_negl), gamma))
    hinge_r = ad.relu(ad.shift(ad.sub(pos_rep, d_negr), gamma))
    return ad.add(ad.sum_all(hinge_l), ad.sum_all(hinge_r))


def loss(rel_emb: tuple[Tensor, Tensor], path_emb: tuple[Tensor, Tensor] | None,
         seeds: AlignmentSeeds, negatives: NegativeSet,
         config: TrainConfig) -> Tensor:
    """Dual margin ranking loss; the path term is weighted by theta and
    omitted entirely when the path channel is off."""
    if not seeds.pairs:
        raise DataError("loss needs a nonempty seed set")
    left = seeds.left()
    right = seeds.right()
    total = _channel_loss(rel_emb[0], rel_emb[1], left, right,
                          negatives.rel_left, negatives.rel_right,
                          config.gamma_rel)
    if config.use_paths and path_emb is not None:
        path_term = _channel_loss(path_emb[0], path_emb[1], left, right,
                                  negatives.path_left, negatives.path_right,
                                  config.gamma_path)
        total = ad.add(total, ad.scale(path_term, config.theta))
    return total


@dataclass
class HistoryRow:
    epoch: int
    loss: float
    val_hits1: float | None = None


@dataclass
class TrainResult:
    rel_params: enc.RhgtParams
    path_params: enc.RhgtParams | None
    e_rel1: np.ndarray
    e_rel2: np.ndarray
    e_path1: np.ndarray | None
    e_path2: np.ndarray | None
    history: list[HistoryRow] = field(default_factory=list)
    best_epoch: int = 0
    best_val_hits1: float = 0.0


def train(kg1: KnowledgeGraph, kg2: KnowledgeGraph,
          seeds: dict[str, AlignmentSeeds],
          names1: np.ndarray, names2: np.ndarray,
          encoder_config: enc.EncoderConfig,
          config: TrainConfig) -> TrainResult:
    """Full training loop; returns the best-validation checkpoint.

    Deterministic for a fixed config seed in single-threaded mode: parameter
    init, negative sampling and the epoch schedule all derive from it.
    """
    train_seeds = seeds["train"]
    valid_seeds = seeds.get("valid")
    if not train_seeds.pairs:
        raise DataError("training needs a nonempty train seed set")
    if valid_seeds is None or not valid_seeds.pairs:
        raise DataError("training needs a nonempty validation seed set")

    rel_edges1 = enc.EdgeList.from_triples(kg1.rel_triples, kg1.num_entities,
                                           kg1.num_relations)
    rel_edges2 = enc.EdgeList.from_triples(kg2.rel_triples, kg2.num_entities,
                                           kg2.num_relations)
    path_edges1 = path_edges2 = None
    if config.use_paths:
        if kg1.num_paths == 0 or kg2.num_paths == 0:
            raise DataError(
                "path channel enabled but no mined paths attached; "
                "run the miner first or disable the path channel"
            )
        path_edges1 = enc.EdgeList.from_triples(kg1.path_triples, kg1.num_entities,
                                                kg1.num_paths)
        path_edges2 = enc.EdgeList.from_triples(kg2.path_triples, kg2.num_entities,
                                                kg2.num_paths)

    rng = np.random.default_rng(config.seed)
    rel_params = enc.init_params(encoder_config, rng)
    path_params = enc.init_params(encoder_config, rng) if config.use_paths else None
    tensors = list(rel_params.tensors("rel").values())
    if path_params is not None:
        tensors += list(path_params.tensors("path").values())
    optimizer = Adam(tensors, lr=config.lr)

    positives = set(train_seeds.pairs)
    theta_inf = config.theta if config.use_paths else 0.0
    names1_t = Tensor(names1)
    names2_t = Tensor(names2)

    def encode_all(epoch: int):
        e_rel1 = enc.encode(names1_t, rel_edges1, rel_params)
        e_rel2 = enc.encode(names2_t, rel_edges2, rel_params)
        if config.use_paths:
            e_path1 = enc.encode(names1_t, path_edges1, path_params)
            e_path2 = enc.encode(names2_t, path_edges2, path_params)
        else:
            e_path1 = e_path2 = None
        for emb in (e_rel1, e_rel2, e_path1, e_path2):
            if emb is not None and not np.all(np.isfinite(emb.data)):
                raise NumericalError(
                    f"training diverged: non-finite embeddings at epoch {epoch}"
                )
        return e_rel1, e_rel2, e_path1, e_path2

    history: list[HistoryRow] = []
    best = None  # (hits1, epoch, rel values, path values, embeddings)
    evals_since_best = 0
    negatives = None
    for epoch in range(1, config.epochs + 1):
        e_rel1, e_rel2, e_path1, e_path2 = encode_all(epoch)
        if negatives is None or (epoch - 1) % config.negatives_refresh == 0:
            negatives = sample_negatives(
                train_seeds,
                (e_rel1.data, e_rel2.data),
                (e_path1.data, e_path2.data) if config.use_paths else None,
                k=config.negatives_per_pair,
                strategy=config.negative_strategy,
                epoch_seed=config.seed + epoch,
                positives=positives,
            )
        epoch_loss = loss((e_rel1, e_rel2),
                          (e_path1, e_path2) if config.use_paths else None,
                          train_seeds, negatives, config)
        value = epoch_loss.item()
        if not np.isfinite(value):
            raise NumericalError(f"loss diverged to {value} at epoch {epoch}")
        epoch_loss.backward()
        optimizer.step()

        row = HistoryRow(epoch, value)
        if epoch % config.eval_every == 0 or epoch == config.epochs:
            e_rel1, e_rel2, e_path1, e_path2 = encode_all(epoch)
            result = evaluate(
                valid_seeds,
                (e_rel1.data, e_rel2.data),
                (e_path1.data, e_path2.data) if config.use_paths else None,
                theta_inf=theta_inf,
                ks=(1,),
            )
            row.val_hits1 = result.hits[1]
            if best is None or row.val_hits1 > best[0]:
                best = (
                    row.val_hits1,
                    epoch,
                    rel_params.values(),
                    path_params.values() if path_params is not None else None,
                    (e_rel1.data.copy(), e_rel2.data.copy(),
                     e_path1.data.copy() if e_path1 is not None else None,
                     e_path2.data.copy() if e_path2 is not None else None),
                )
                evals_since_best = 0
            else:
                evals_since_best += 1
            logger.info("epoch %d: loss %.4f, val hits@1 %.4f",
                        epoch, value, row.val_hits1)
        history.append(row)
        if best is not None and evals_since_best >= config.patience:
            logger.info("early stop at epoch %d (best %.4f at epoch %d)",
                        epoch, best[0], best[1])
            break

    assert best is not None
    rel_params.load_values(best[2])
    if path_params is not None:
        path_params.load_values(best[3])
    e_rel1, e_rel2, e_path1, e_path2 = best[4]
    return TrainResult(
        rel_params=rel_params,
        path_params=path_params,
        e_rel1=e_rel1,
        e_rel2=e_rel2,
        e_path1=e_path1,
        e_path2=e_path2,
        history=history,
        best_epoch=best[1],
        best_val_hits1=best[0],
    )
