"""Reliable two-hop path mining from seed alignments.

For every training seed pair the two-hop path neighborhoods of both
entities are matched one-to-one by name-embedding cosine similarity;
each matched neighbor pair votes for the cross product of the paths that
reach it on either side. Path pairs with more than ``tau_path`` votes
form the reliable set, which projects to a per-KG path vocabulary and
its two-hop path triples.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .data import AlignmentSeeds, KnowledgeGraph, RelPair, Triple, build_path_triples
from .errors import DataError

logger = logging.getLogger(__name__)

DEFAULT_TAU_SIM = 0.5
DEFAULT_TAU_PATH = 20
DEFAULT_MAX_FANOUT = 10_000


@dataclass(frozen=True)
class PathNeighborhood:
    """Deduplicated (neighbor, relation-pair) entries reachable from
    ``owner`` by directed two-hop walks over the full expansion.

    ``skipped`` marks hub entities whose expansion exceeded the fanout cap;
    their entries are empty.
    """

    owner: int
    entries: tuple[tuple[int, RelPair], ...]
    skipped: bool = False

    def distinct_neighbors(self) -> list[int]:
        return sorted({n for n, _ in self.entries})

    def paths_to(self, neighbor: int) -> list[RelPair]:
        return sorted(p for n, p in self.entries if n == neighbor)


def path_neighborhood(kg: KnowledgeGraph, e: int,
                      max_fanout: int = DEFAULT_MAX_FANOUT) -> PathNeighborhood:
    """Two-hop expansion of one entity, capped at ``max_fanout`` entries."""
    if not (0 <= e < kg.num_entities):
        raise ValueError(f"entity id {e} out of range for {kg.num_entities} entities")
    entries: set[tuple[int, RelPair]] = set()
    for r1, mid in kg.out_edges(e):
        for r2, tail in kg.out_edges(mid):
            entries.add((tail, (r1, r2)))
            if len(entries) > max_fanout:
                return PathNeighborhood(e, (), skipped=True)
    return PathNeighborhood(e, tuple(sorted(entries)))


def _unit_rows(matrix: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    safe = np.where(norms == 0.0, 1.0, norms)
    return matrix / safe


def similarity_matrix(pn1: PathNeighborhood, pn2: PathNeighborhood,
                      names1: np.ndarray, names2: np.ndarray
                      ) -> tuple[np.ndarray, list[int], list[int]]:
    """Cosine similarities between the distinct neighbors of two path
    neighborhoods, plus the neighbor lists indexing the matrix rows/cols.

    Zero-norm name rows yield similarity 0.
    """
    if not pn1.entries or not pn2.entries:
        raise ValueError("similarity_matrix needs two nonempty neighborhoods")
    n1 = pn1.distinct_neighbors()
    n2 = pn2.distinct_neighbors()
    u1 = _unit_rows(names1[n1])
    u2 = _unit_rows(names2[n2])
    return u1 @ u2.T, n1, n2


def match_neighbors(sim: np.ndarray, tau_sim: float = DEFAULT_TAU_SIM
                    ) -> list[tuple[int, int, float]]:
    """Greedy one-to-one matching of row argmax candidates above tau_sim.

    Each row nominates its best column (ties to the lowest column); the
    nominees above the threshold are visited by descending similarity
    (exact ties by ascending row then column) and accepted when both
    endpoints are still free. Returns (row, col, similarity) triples in
    acceptance order.
    """
    sim = np.asarray(sim, dtype=np.float64)
    if sim.size == 0:
        return []
    best_col = np.argmax(sim, axis=1)
    best_val = sim[np.arange(sim.shape[0]), best_col]
    candidates = [
        (float(best_val[i]), i, int(best_col[i]))
        for i in range(sim.shape[0])
        if best_val[i] > tau_sim
    ]
    candidates.sort(key=lambda c: (-c[0], c[1], c[2]))
    taken_rows: set[int] = set()
    taken_cols: set[int] = set()
    matches: list[tuple[int, int, float]] = []
    for value, row, col in candidates:
        if row in taken_rows or col in taken_cols:
            continue
        taken_rows.add(row)
        taken_cols.add(col)
        matches.append((row, col, value))
    return matches


def deduce_path_pairs(matched: list[tuple[int, int, float]],
                      pn1: PathNeighborhood, pn2: PathNeighborhood
                      ) -> Counter:
    """Path matching pairs implied by matched neighbors: for each matched
    (e1, e2), every path reaching e1 pairs with every path reaching e2."""
    votes: Counter = Counter()
    for e1, e2, _ in matched:
        for p1 in pn1.paths_to(e1):
            for p2 in pn2.paths_to(e2):
                votes[(p1, p2)] += 1
    return votes


@dataclass
class ReliablePathSet:
    """Accumulated match counts per (KG1 path, KG2 path) with the
    threshold that defines reliability (kept iff count > tau_path)."""

    matched_pairs: dict[tuple[RelPair, RelPair], int]
    tau_path: float

    def kept(self) -> dict[tuple[RelPair, RelPair], int]:
        return {k: c for k, c in self.matched_pairs.items() if c > self.tau_path}


@dataclass
class MiningResult:
    reliable: ReliablePathSet
    vocab1: tuple[RelPair, ...]
    vocab2: tuple[RelPair, ...]
    path_triples1: frozenset[Triple]
    path_triples2: frozenset[Triple]
    stats: dict = field(default_factory=dict)

    def apply(self, kg1: KnowledgeGraph, kg2: KnowledgeGraph
              ) -> tuple[KnowledgeGraph, KnowledgeGraph]:
        """Both KGs with the mined vocabulary and path triples attached."""
        return (
            kg1.with_paths(self.vocab1, self.path_triples1),
            kg2.with_paths(self.vocab2, self.path_triples2),
        )


def mine(kg1: KnowledgeGraph, kg2: KnowledgeGraph, seeds: AlignmentSeeds,
         names1: np.ndarray, names2: np.ndarray,
         tau_sim: float = DEFAULT_TAU_SIM,
         tau_path: float = DEFAULT_TAU_PATH,
         max_fanout: int = DEFAULT_MAX_FANOUT) -> MiningResult:
    """Run the reliable-path miner over the training seeds.

    Only training seeds are accepted; validation/test pairs must never
    influence the mined vocabulary.
    """
    if seeds.role != "train":
        raise ValueError(f"mining consumes train seeds only, got role {seeds.role!r}")
    if not seeds.pairs:
        raise DataError("cannot mine paths from an empty training seed set")

    unit1 = _unit_rows(names1)
    unit2 = _unit_rows(names2)
    votes: Counter = Counter()
    skipped_hubs = 0
    matched_neighbors = 0
    for e1, e2 in seeds.pairs:
        pn1 = path_neighborhood(kg1, e1, max_fanout)
        pn2 = path_neighborhood(kg2, e2, max_fanout)
        if pn1.skipped or pn2.skipped:
            skipped_hubs += 1
            continue
        if not pn1.entries or not pn2.entries:
            continue
        sim, n1, n2 = similarity_matrix(pn1, pn2, unit1, unit2)
        matched = match_neighbors(sim, tau_sim)
        entity_matches = [(n1[i], n2[j], v) for i, j, v in matched]
        matched_neighbors += len(entity_matches)
        votes.update(deduce_path_pairs(entity_matches, pn1, pn2))

    reliable = ReliablePathSet(dict(votes), tau_path)
    kept = reliable.kept()
    vocab1 = tuple(sorted({p1 for p1, _ in kept}))
    vocab2 = tuple(sorted({p2 for _, p2 in kept}))
    triples1 = build_path_triples(kg1, vocab1)
    triples2 = build_path_triples(kg2, vocab2)
    stats = {
        "seed_pairs": len(seeds.pairs),
        "skipped_hub_pairs": skipped_hubs,
        "matched_neighbors": matched_neighbors,
        "path_pairs_seen": len(votes),
        "path_pairs_kept": len(kept),
        "paths_kg1": len(vocab1),
        "paths_kg2": len(vocab2),
        "path_triples_kg1": len(triples1),
        "path_triples_kg2": len(triples2),
    }
    logger.info("mining stats: %s", stats)
    return MiningResult(reliable, vocab1, vocab2, triples1, triples2, stats)
