"""Alignment inference and ranking metrics.

Candidates for a KG1 entity are ranked by the fused Manhattan distance
d_rel + theta * d_path, ascending, with exact-distance ties broken by
candidate entity id. Hits@k is the fraction of test pairs whose true
counterpart ranks in the top k; MRR is the mean reciprocal rank.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .data import AlignmentSeeds
from .errors import DataError

EmbPair = tuple[np.ndarray, np.ndarray]


@dataclass
class RankingResult:
    ranks: np.ndarray  # 1-based rank of the true counterpart per test pair
    hits: dict[int, float]
    mrr: float
    n: int
    n_candidates: int

    def as_dict(self) -> dict:
        out = {f"hits{k}": v for k, v in sorted(self.hits.items())}
        out["mrr"] = self.mrr
        out["n"] = self.n
        out["n_candidates"] = self.n_candidates
        return out


def fused_distance(rel_emb: EmbPair, path_emb: EmbPair | None,
                   theta_inf: float, i: int, j: int) -> float:
    """Fused distance between KG1 entity i and KG2 entity j; without path
    embeddings the weight is forced to 0."""
    d = float(np.abs(rel_emb[0][i] - rel_emb[1][j]).sum())
    if path_emb is not None and theta_inf != 0.0:
        d += theta_inf * float(np.abs(path_emb[0][i] - path_emb[1][j]).sum())
    return d


def fused_distance_matrix(rel_emb: EmbPair, path_emb: EmbPair | None,
                          theta_inf: float, rows: np.ndarray,
                          cols: np.ndarray | None = None) -> np.ndarray:
    """Distances from the given KG1 rows to KG2 columns (all by default)."""
    e1, e2 = rel_emb
    right = e2 if cols is None else e2[cols]
    dist = cdist(e1[rows], right, metric="cityblock")
    if path_emb is not None and theta_inf != 0.0:
        p1, p2 = path_emb
        pright = p2 if cols is None else p2[cols]
        dist = dist + theta_inf * cdist(p1[rows], pright, metric="cityblock")
    return dist


def evaluate(test: AlignmentSeeds, rel_emb: EmbPair,
             path_emb: EmbPair | None = None, theta_inf: float = 0.3,
             ks: tuple[int, ...] = (1, 5, 10),
             candidates: str = "all") -> RankingResult:
    """Rank the true counterpart of every test pair among the candidates.

    ``candidates="all"`` ranks against every KG2 entity; ``"test"``
    restricts the pool to the test pairs' own right-hand entities.
    """
    if not test.pairs:
        raise DataError("evaluate needs a nonempty test seed set")
    if path_emb is None:
        theta_inf = 0.0
    left = test.left()
    right = test.right()
    if candidates == "all":
        cand_ids = np.arange(rel_emb[1].shape[0], dtype=np.int64)
        cols = None
    elif candidates == "test":
        cand_ids = np.sort(right)
        cols = cand_ids
    else:
        raise ValueError(f"candidates must be 'all' or 'test', got {candidates!r}")

    ranks = np.empty(left.size, dtype=np.int64)
    block = 256
    for start in range(0, left.size, block):
        stop = min(start + block, left.size)
        dist = fused_distance_matrix(rel_emb, path_emb, theta_inf,
                                     left[start:stop], cols)
        for row in range(start, stop):
            d = dist[row - start]
            true_pos = int(np.searchsorted(cand_ids, right[row]))
            if true_pos >= cand_ids.size or cand_ids[true_pos] != right[row]:
                raise DataError(f"true counterpart {right[row]} not in candidate set")
            d_true = d[true_pos]
            stronger = int((d < d_true).sum())
            tied_before = int(((d == d_true) & (cand_ids < right[row])).sum())
            ranks[row] = 1 + stronger + tied_before

    hits = {k: float((ranks <= k).mean()) for k in ks}
    return RankingResult(
        ranks=ranks,
        hits=hits,
        mrr=float((1.0 / ranks).mean()),
        n=int(left.size),
        n_candidates=int(cand_ids.size),
    )


def cosine_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise cosine similarity; zero-norm rows give 0."""
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    denom = na * nb
    dots = (a * b).sum(axis=1)
    return np.where(denom == 0.0, 0.0, dots / np.where(denom == 0.0, 1.0, denom))


def make_harder_split(links: list[tuple[int, int]], names1: np.ndarray,
                      names2: np.ndarray, fraction: float) -> list[tuple[int, int]]:
    """The least name-similar ceil(fraction * n) links, ordered by ascending
    cosine similarity (ties by original position)."""
    if not (0.0 < fraction <= 1.0):
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    lefts = np.array([p for p, _ in links], dtype=np.int64)
    rights = np.array([q for _, q in links], dtype=np.int64)
    sims = cosine_rows(names1[lefts], names2[rights])
    order = np.argsort(sims, kind="stable")
    keep = math.ceil(fraction * len(links))
    return [links[i] for i in order[:keep]]


def name_only_baseline(test: AlignmentSeeds, names1: np.ndarray,
                       names2: np.ndarray,
                       ks: tuple[int, ...] = (1, 5, 10),
                       candidates: str = "all") -> RankingResult:
    """Ranking quality of the raw name embeddings without any training."""
    return evaluate(test, (names1, names2), None, theta_inf=0.0,
                    ks=ks, candidates=candidates)
