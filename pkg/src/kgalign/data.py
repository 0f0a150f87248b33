"""Knowledge-graph domain model and loaders for the tab-separated dataset layout.

File formats (all UTF-8, LF):
  rel_triples_k        head_uri <TAB> relation_uri <TAB> tail_uri
  ent_links            uri_in_kg1 <TAB> uri_in_kg2
  ent_name_emb_k.tsv   uri <TAB> v1 v2 ... vd
  path_triples_k.tsv   head_uri <TAB> rf_uri,rg_uri <TAB> tail_uri
  path_vocab.tsv       rf1_uri,rg1_uri <TAB> rf2_uri,rg2_uri <TAB> count
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError

logger = logging.getLogger(__name__)

RelPair = tuple[int, int]
Triple = tuple[int, int, int]


@dataclass(frozen=True)
class AlignmentSeeds:
    """Pre-aligned entity pairs for one role of the train/valid/test split."""

    pairs: tuple[tuple[int, int], ...]
    role: str

    def __len__(self) -> int:
        return len(self.pairs)

    def left(self) -> np.ndarray:
        return np.array([p for p, _ in self.pairs], dtype=np.int64)

    def right(self) -> np.ndarray:
        return np.array([q for _, q in self.pairs], dtype=np.int64)


@dataclass
class KnowledgeGraph:
    """One KG: entities, relations, relation triples and (optionally) the
    mined path vocabulary plus its two-hop path triples.

    Constructed structures are treated as immutable; ``with_paths`` returns
    a new instance instead of mutating.
    """

    entity_uris: list[str]
    relation_uris: list[str]
    rel_triples: frozenset[Triple]
    path_vocab: tuple[RelPair, ...] = ()
    path_triples: frozenset[Triple] = frozenset()

    _ent_index: dict[str, int] = field(init=False, repr=False)
    _rel_index: dict[str, int] = field(init=False, repr=False)
    _rel_out: dict[int, list[tuple[int, int]]] = field(init=False, repr=False)
    _path_out: dict[int, list[tuple[int, int]]] = field(init=False, repr=False)

    def __post_init__(self):
        self.rel_triples = frozenset(self.rel_triples)
        self.path_vocab = tuple(tuple(p) for p in self.path_vocab)
        self.path_triples = frozenset(self.path_triples)
        self._ent_index = {u: i for i, u in enumerate(self.entity_uris)}
        self._rel_index = {u: i for i, u in enumerate(self.relation_uris)}
        if len(self._ent_index) != len(self.entity_uris):
            raise DataError("duplicate entity URIs")
        if len(self._rel_index) != len(self.relation_uris):
            raise DataError("duplicate relation URIs")
        ne, nr = len(self.entity_uris), len(self.relation_uris)
        for h, r, t in self.rel_triples:
            if not (0 <= h < ne and 0 <= t < ne and 0 <= r < nr):
                raise DataError(f"relation triple {(h, r, t)} out of range")
        if len(set(self.path_vocab)) != len(self.path_vocab):
            raise DataError("duplicate pairs in path vocabulary")
        for rf, rg in self.path_vocab:
            if not (0 <= rf < nr and 0 <= rg < nr):
                raise DataError(f"path vocabulary pair {(rf, rg)} out of range")
        np_ = len(self.path_vocab)
        for h, p, t in self.path_triples:
            if not (0 <= h < ne and 0 <= t < ne and 0 <= p < np_):
                raise DataError(f"path triple {(h, p, t)} out of range")
        self._rel_out = _index_by_head(self.rel_triples)
        self._path_out = _index_by_head(self.path_triples)

    @property
    def num_entities(self) -> int:
        return len(self.entity_uris)

    @property
    def num_relations(self) -> int:
        return len(self.relation_uris)

    @property
    def num_paths(self) -> int:
        return len(self.path_vocab)

    def entity_id(self, uri: str) -> int:
        try:
            return self._ent_index[uri]
        except KeyError:
            raise DataError(f"unknown entity URI: {uri}") from None

    def relation_id(self, uri: str) -> int:
        try:
            return self._rel_index[uri]
        except KeyError:
            raise DataError(f"unknown relation URI: {uri}") from None

    def out_edges(self, e: int) -> list[tuple[int, int]]:
        """Sorted (relation, tail) pairs leaving entity ``e``."""
        return self._rel_out.get(e, [])

    def path_out_edges(self, e: int) -> list[tuple[int, int]]:
        return self._path_out.get(e, [])

    def with_paths(self, path_vocab, path_triples) -> "KnowledgeGraph":
        return KnowledgeGraph(
            entity_uris=self.entity_uris,
            relation_uris=self.relation_uris,
            rel_triples=self.rel_triples,
            path_vocab=tuple(tuple(p) for p in path_vocab),
            path_triples=frozenset(path_triples),
        )

    def with_inverse_relations(self) -> "KnowledgeGraph":
        """Directed graph plus reversed copies of every triple.

        The inverse of relation r gets id ``r + num_relations`` and URI
        ``<uri>~inv``. Off by default everywhere; exists to test the
        symmetrized reading of entity neighborhoods.
        """
        nr = self.num_relations
        inverse = {(t, r + nr, h) for h, r, t in self.rel_triples}
        return KnowledgeGraph(
            entity_uris=self.entity_uris,
            relation_uris=self.relation_uris + [u + "~inv" for u in self.relation_uris],
            rel_triples=self.rel_triples | inverse,
        )


def _index_by_head(triples) -> dict[int, list[tuple[int, int]]]:
    out: dict[int, list[tuple[int, int]]] = {}
    for h, r, t in sorted(triples):
        out.setdefault(h, []).append((r, t))
    return out


def _read_lines(path) -> list[str]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"file not found: {path}")
    return path.read_text(encoding="utf-8").splitlines()


def _parse_id_file(path) -> list[str]:
    """An id file is either one URI per line (id = line order) or
    ``id <TAB> uri`` pairs that must form a contiguous 0..n-1 range."""
    rows = []
    explicit = None
    for lineno, line in enumerate(_read_lines(path), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) == 1:
            kind = False
            rows.append(parts[0].strip())
        elif len(parts) == 2:
            kind = True
            try:
                rows.append((int(parts[0]), parts[1].strip()))
            except ValueError:
                raise DataError(f"{path}:{lineno}: bad id field {parts[0]!r}") from None
        else:
            raise DataError(f"{path}:{lineno}: expected 1 or 2 tab-separated fields")
        if explicit is None:
            explicit = kind
        elif explicit != kind:
            raise DataError(f"{path}:{lineno}: mixed id-file layouts")
    if not rows:
        raise DataError(f"empty id file: {path}")
    if not explicit:
        return list(rows)
    rows.sort()
    ids = [i for i, _ in rows]
    if ids != list(range(len(rows))):
        raise DataError(f"{path}: ids are not contiguous from 0")
    return [uri for _, uri in rows]


def load_kg(rel_triple_file, entity_file=None, relation_file=None) -> KnowledgeGraph:
    """Load a KG from a tab-separated triple file.

    Without id files, contiguous ids are assigned in first-appearance order
    (head then tail within each line). Duplicate triple lines collapse.
    """
    entity_uris: list[str] = [] if entity_file is None else _parse_id_file(entity_file)
    relation_uris: list[str] = [] if relation_file is None else _parse_id_file(relation_file)
    ent_index = {u: i for i, u in enumerate(entity_uris)}
    rel_index = {u: i for i, u in enumerate(relation_uris)}

    def ent_id(uri: str, lineno: int) -> int:
        if uri not in ent_index:
            if entity_file is not None:
                raise DataError(
                    f"{rel_triple_file}:{lineno}: entity {uri!r} missing from {entity_file}"
                )
            ent_index[uri] = len(entity_uris)
            entity_uris.append(uri)
        return ent_index[uri]

    def rel_id(uri: str, lineno: int) -> int:
        if uri not in rel_index:
            if relation_file is not None:
                raise DataError(
                    f"{rel_triple_file}:{lineno}: relation {uri!r} missing from {relation_file}"
                )
            rel_index[uri] = len(relation_uris)
            relation_uris.append(uri)
        return rel_index[uri]

    triples: set[Triple] = set()
    for lineno, line in enumerate(_read_lines(rel_triple_file), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise DataError(
                f"{rel_triple_file}:{lineno}: expected 3 tab-separated fields, got {len(parts)}"
            )
        h, r, t = (p.strip() for p in parts)
        hi = ent_id(h, lineno)
        ri = rel_id(r, lineno)
        ti = ent_id(t, lineno)
        triples.add((hi, ri, ti))
    if not triples:
        raise DataError(f"no triples in {rel_triple_file}")
    kg = KnowledgeGraph(entity_uris, relation_uris, frozenset(triples))
    logger.info(
        "loaded %s: %d entities, %d relations, %d triples",
        rel_triple_file, kg.num_entities, kg.num_relations, len(kg.rel_triples),
    )
    return kg


def load_seeds(link_file, kg1: KnowledgeGraph, kg2: KnowledgeGraph,
               split: tuple[float, float, float] = (20, 10, 70),
               seed: int = 0) -> dict[str, AlignmentSeeds]:
    """Split the pre-aligned link file into train/valid/test seed sets.

    The shuffle is a deterministic permutation under ``seed``; train and
    valid take their floored percentage shares, the remainder is test.
    """
    if abs(sum(split) - 100.0) > 1e-9:
        raise DataError(f"split percentages must sum to 100, got {split}")
    pairs: list[tuple[int, int]] = []
    seen: set[tuple[int, int]] = set()
    for lineno, line in enumerate(_read_lines(link_file), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise DataError(f"{link_file}:{lineno}: expected 2 tab-separated fields")
        try:
            pair = (kg1.entity_id(parts[0].strip()), kg2.entity_id(parts[1].strip()))
        except DataError as exc:
            raise DataError(f"{link_file}:{lineno}: {exc}") from None
        if pair in seen:
            continue
        seen.add(pair)
        pairs.append(pair)
    if not pairs:
        raise DataError(f"no links in {link_file}")
    lefts = [p for p, _ in pairs]
    rights = [q for _, q in pairs]
    if len(set(lefts)) != len(lefts) or len(set(rights)) != len(rights):
        raise DataError(f"{link_file}: an entity appears in more than one link")

    rng = np.random.default_rng(seed)
    order = rng.permutation(len(pairs))
    shuffled = [pairs[i] for i in order]
    n_train = math.floor(len(pairs) * split[0] / 100.0)
    n_valid = math.floor(len(pairs) * split[1] / 100.0)
    return {
        "train": AlignmentSeeds(tuple(shuffled[:n_train]), "train"),
        "valid": AlignmentSeeds(tuple(shuffled[n_train : n_train + n_valid]), "valid"),
        "test": AlignmentSeeds(tuple(shuffled[n_train + n_valid :]), "test"),
    }


def load_embeddings(embedding_file, kg: KnowledgeGraph) -> np.ndarray:
    """Entity name embeddings as a (num_entities, d) float64 matrix.

    Row order follows entity ids regardless of file order; rows for URIs
    unknown to the KG are ignored.
    """
    by_id: dict[int, np.ndarray] = {}
    dim = None
    for lineno, line in enumerate(_read_lines(embedding_file), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise DataError(f"{embedding_file}:{lineno}: expected uri<TAB>values")
        uri = parts[0].strip()
        try:
            values = np.array([float(v) for v in parts[1].split()], dtype=np.float64)
        except ValueError:
            raise DataError(f"{embedding_file}:{lineno}: non-numeric value") from None
        if dim is None:
            dim = values.size
        elif values.size != dim:
            raise DataError(
                f"{embedding_file}:{lineno}: ragged dimensions ({values.size} vs {dim})"
            )
        if uri not in kg._ent_index:
            continue
        eid = kg._ent_index[uri]
        if eid in by_id:
            raise DataError(f"{embedding_file}:{lineno}: duplicate row for {uri}")
        by_id[eid] = values
    if dim is None:
        raise DataError(f"no embeddings in {embedding_file}")
    missing = [u for u, i in kg._ent_index.items() if i not in by_id]
    if missing:
        shown = ", ".join(sorted(missing)[:10])
        extra = f" and {len(missing) - 10} more" if len(missing) > 10 else ""
        raise DataError(f"{embedding_file}: missing embeddings for {shown}{extra}")
    matrix = np.vstack([by_id[i] for i in range(kg.num_entities)])
    if not np.all(np.isfinite(matrix)):
        raise DataError(f"{embedding_file}: non-finite values")
    return matrix


def build_path_triples(kg: KnowledgeGraph, path_vocab) -> frozenset[Triple]:
    """All (head, path_id, tail) with a two-hop witness for each vocab pair.

    Self-loops are kept; multiple witness midpoints collapse to one triple.
    """
    path_vocab = [tuple(p) for p in path_vocab]
    for rf, rg in path_vocab:
        if not (0 <= rf < kg.num_relations) or not (0 <= rg < kg.num_relations):
            raise DataError(f"unknown relation in path vocabulary pair {(rf, rg)}")
    by_first: dict[int, list[tuple[int, int]]] = {}
    for pid, (rf, rg) in enumerate(path_vocab):
        by_first.setdefault(rf, []).append((pid, rg))
    out_by_rel: dict[int, dict[int, list[int]]] = {}
    for h, r, t in kg.rel_triples:
        out_by_rel.setdefault(h, {}).setdefault(r, []).append(t)
    triples: set[Triple] = set()
    for h, r1, mid in kg.rel_triples:
        for pid, r2 in by_first.get(r1, ()):
            for tail in out_by_rel.get(mid, {}).get(r2, ()):
                triples.add((h, pid, tail))
    return frozenset(triples)


@dataclass
class AlignmentDataset:
    """Everything one alignment run needs: both KGs, their name embeddings
    and the seed split."""

    kg1: KnowledgeGraph
    kg2: KnowledgeGraph
    names1: np.ndarray
    names2: np.ndarray
    seeds: dict[str, AlignmentSeeds]


def load_dataset(data_dir, split=(20, 10, 70), seed: int = 0) -> AlignmentDataset:
    """Load a dataset directory in the standard layout (rel_triples_1/2,
    ent_links, ent_name_emb_1/2.tsv)."""
    data_dir = Path(data_dir)
    kg1 = load_kg(data_dir / "rel_triples_1")
    kg2 = load_kg(data_dir / "rel_triples_2")
    names1 = load_embeddings(data_dir / "ent_name_emb_1.tsv", kg1)
    names2 = load_embeddings(data_dir / "ent_name_emb_2.tsv", kg2)
    if names1.shape[1] != names2.shape[1]:
        raise DataError(
            f"embedding dims differ: {names1.shape[1]} vs {names2.shape[1]}"
        )
    seeds = load_seeds(data_dir / "ent_links", kg1, kg2, split=split, seed=seed)
    return AlignmentDataset(kg1, kg2, names1, names2, seeds)


def save_kg(kg: KnowledgeGraph, out_dir, suffix: str) -> None:
    """Write rel_triples_<suffix> plus ent/rel id files so a reload
    reproduces the exact id assignment."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / f"rel_triples_{suffix}", "w", encoding="utf-8") as f:
        for h, r, t in sorted(kg.rel_triples):
            f.write(f"{kg.entity_uris[h]}\t{kg.relation_uris[r]}\t{kg.entity_uris[t]}\n")
    with open(out_dir / f"ent_ids_{suffix}", "w", encoding="utf-8") as f:
        for i, u in enumerate(kg.entity_uris):
            f.write(f"{i}\t{u}\n")
    with open(out_dir / f"rel_ids_{suffix}", "w", encoding="utf-8") as f:
        for i, u in enumerate(kg.relation_uris):
            f.write(f"{i}\t{u}\n")


def save_embeddings(path, kg: KnowledgeGraph, matrix: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for i, uri in enumerate(kg.entity_uris):
            f.write(uri + "\t" + " ".join(repr(v) for v in matrix[i].tolist()) + "\n")


def save_path_files(out_dir, kg1: KnowledgeGraph, kg2: KnowledgeGraph,
                    kept_pairs: dict[tuple[RelPair, RelPair], int],
                    vocab1, vocab2,
                    triples1: frozenset[Triple], triples2: frozenset[Triple]) -> None:
    """Emit path_vocab.tsv and path_triples_{1,2}.tsv for the mined paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def pair_str(kg: KnowledgeGraph, pair: RelPair) -> str:
        return f"{kg.relation_uris[pair[0]]},{kg.relation_uris[pair[1]]}"

    with open(out_dir / "path_vocab.tsv", "w", encoding="utf-8") as f:
        for (p1, p2), count in sorted(kept_pairs.items()):
            f.write(f"{pair_str(kg1, p1)}\t{pair_str(kg2, p2)}\t{count}\n")
    for name, kg, vocab, triples in (
        ("path_triples_1.tsv", kg1, vocab1, triples1),
        ("path_triples_2.tsv", kg2, vocab2, triples2),
    ):
        with open(out_dir / name, "w", encoding="utf-8") as f:
            for h, pid, t in sorted(triples):
                f.write(f"{kg.entity_uris[h]}\t{pair_str(kg, vocab[pid])}\t{kg.entity_uris[t]}\n")


def _parse_rel_pair(kg: KnowledgeGraph, text: str, where: str) -> RelPair:
    parts = text.split(",")
    if len(parts) != 2:
        raise DataError(f"{where}: expected rf,rg relation pair, got {text!r}")
    return (kg.relation_id(parts[0].strip()), kg.relation_id(parts[1].strip()))


def load_path_vocab(path, kg1: KnowledgeGraph, kg2: KnowledgeGraph
                    ) -> dict[tuple[RelPair, RelPair], int]:
    """Matched path pairs with counts, as written by save_path_files."""
    pairs: dict[tuple[RelPair, RelPair], int] = {}
    for lineno, line in enumerate(_read_lines(path), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise DataError(f"{path}:{lineno}: expected 3 tab-separated fields")
        p1 = _parse_rel_pair(kg1, parts[0], f"{path}:{lineno}")
        p2 = _parse_rel_pair(kg2, parts[1], f"{path}:{lineno}")
        try:
            pairs[(p1, p2)] = int(parts[2])
        except ValueError:
            raise DataError(f"{path}:{lineno}: bad count {parts[2]!r}") from None
    if not pairs:
        raise DataError(f"no path pairs in {path}")
    return pairs


def load_path_triples(path, kg: KnowledgeGraph, vocab) -> frozenset[Triple]:
    """Path triples referencing pairs of the given per-KG vocabulary."""
    vocab_index = {tuple(p): i for i, p in enumerate(vocab)}
    triples: set[Triple] = set()
    for lineno, line in enumerate(_read_lines(path), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise DataError(f"{path}:{lineno}: expected 3 tab-separated fields")
        pair = _parse_rel_pair(kg, parts[1], f"{path}:{lineno}")
        if pair not in vocab_index:
            raise DataError(f"{path}:{lineno}: path pair {parts[1]!r} not in vocabulary")
        triples.add((kg.entity_id(parts[0].strip()), vocab_index[pair],
                     kg.entity_id(parts[2].strip())))
    return frozenset(triples)
