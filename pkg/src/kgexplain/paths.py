"""Embedding-augmented graph and relation-path feature extraction.

A relation path abstracts a concrete node walk between two entities into the
sequence of relations traversed, with a per-step direction marker since edges
may be walked against their orientation.  Features are one-hot: bit j of a
pair's row says whether vocabulary path j connects the pair in the augmented
graph.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .data import KnowledgeGraph, Triple
from .embedding import EmbeddingModel, classify_batch, nearest_neighbors


@dataclass(frozen=True, order=True)
class RelationStep:
    relation: int
    forward: bool

    def flipped(self) -> "RelationStep":
        return RelationStep(self.relation, not self.forward)


# a relation path is a non-empty tuple of steps
RelationPath = tuple[RelationStep, ...]


def path_sort_key(path: RelationPath):
    return tuple((s.relation, 0 if s.forward else 1) for s in path)


def format_path(path: RelationPath, relation_names=None) -> str:
    parts = []
    for s in path:
        name = relation_names.name(s.relation) if relation_names is not None else f"r{s.relation}"
        parts.append(f"{name}.{'fwd' if s.forward else 'inv'}")
    return "/".join(parts)


def reverse_path(path: RelationPath) -> RelationPath:
    return tuple(s.flipped() for s in reversed(path))


@dataclass
class AugmentedGraph:
    """Facts of the base graph classified true plus neighbor-substituted
    facts classified true, with shared adjacency lists."""

    base: KnowledgeGraph
    kept_facts: set[Triple]
    added_facts: set[Triple]
    k_substitution: int
    outgoing: dict[int, list[Triple]] = field(default_factory=lambda: defaultdict(list))
    incoming: dict[int, list[Triple]] = field(default_factory=lambda: defaultdict(list))

    def __post_init__(self):
        for t in sorted(self.kept_facts | self.added_facts):
            self.outgoing[t.head].append(t)
            self.incoming[t.tail].append(t)

    @property
    def facts(self) -> set[Triple]:
        return self.kept_facts | self.added_facts

    def provenance(self, t: Triple) -> str:
        return "neighbor_substituted" if t in self.added_facts else "original"


def build_augmented_graph(g: KnowledgeGraph, m: EmbeddingModel, k: int,
                          substitution_mode: str = "both") -> AugmentedGraph:
    """Keep base facts classified true; add top-k nearest-neighbor head/tail
    substitutions of every base fact that the embedding classifies true."""
    if k < 0:
        raise ValueError("k must be >= 0")
    if substitution_mode not in ("both", "head_only", "tail_only"):
        raise ValueError(f"unknown substitution_mode {substitution_mode!r}")
    facts = sorted(g.facts)
    kept = {t for t, ok in zip(facts, classify_batch(m, facts)) if ok}

    added: set[Triple] = set()
    if k > 0 and facts:
        neighbor_cache: dict[int, list[int]] = {}

        def neighbors(e: int) -> list[int]:
            if e not in neighbor_cache:
                neighbor_cache[e] = nearest_neighbors(m, e, min(k, m.n_entities - 1))
            return neighbor_cache[e]

        candidates: list[Triple] = []
        seen = set()
        for t in facts:
            if substitution_mode in ("both", "head_only"):
                for h2 in neighbors(t.head):
                    cand = Triple(h2, t.relation, t.tail)
                    if cand not in g.facts and cand not in seen:
                        seen.add(cand)
                        candidates.append(cand)
            if substitution_mode in ("both", "tail_only"):
                for t2 in neighbors(t.tail):
                    cand = Triple(t.head, t.relation, t2)
                    if cand not in g.facts and cand not in seen:
                        seen.add(cand)
                        candidates.append(cand)
        added = {c for c, ok in zip(candidates, classify_batch(m, candidates)) if ok}

    return AugmentedGraph(base=g, kept_facts=kept, added_facts=added, k_substitution=k)


def _steps_from(graph, node: int, exclude_edge: Triple | None):
    """Neighbor steps leaving `node` along the path direction."""
    for tr in graph.outgoing.get(node, ()):
        if tr != exclude_edge:
            yield tr.tail, RelationStep(tr.relation, True)
    for tr in graph.incoming.get(node, ()):
        if tr != exclude_edge:
            yield tr.head, RelationStep(tr.relation, False)


def _steps_into(graph, node: int, exclude_edge: Triple | None):
    """Predecessor steps arriving at `node` along the path direction."""
    for tr in graph.incoming.get(node, ()):
        if tr != exclude_edge:
            yield tr.head, RelationStep(tr.relation, True)
    for tr in graph.outgoing.get(node, ()):
        if tr != exclude_edge:
            yield tr.tail, RelationStep(tr.relation, False)


def extract_paths(graph, h: int, t: int, max_len: int,
                  exclude_edge: Triple | None = None) -> set[RelationPath]:
    """All distinct relation paths of length <= max_len realized by a simple
    node walk from h to t, found by meeting forward and backward frontiers.

    Intermediate nodes never revisit either endpoint; the endpoints may
    coincide.  `exclude_edge` removes one concrete edge from consideration
    (used to stop a query fact from explaining itself).
    """
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    results: set[RelationPath] = set()

    for nxt, step in _steps_from(graph, h, exclude_edge):
        if nxt == t:
            results.add((step,))

    if max_len == 1:
        return results

    endpoints = {h, t}
    max_fwd = (max_len + 1) // 2
    max_bwd = max_len - max_fwd

    # forward[d]: partial walks of d hops from h; nodes holds the visited
    # intermediates (the end node included)
    forward: list[list[tuple[int, frozenset, RelationPath]]] = [[(h, frozenset(), ())]]
    for d in range(1, max_fwd + 1):
        layer = []
        for end, inter, steps in forward[d - 1]:
            for nxt, step in _steps_from(graph, end, exclude_edge):
                if nxt in endpoints or nxt in inter:
                    continue
                layer.append((nxt, inter | {nxt}, steps + (step,)))
        forward.append(layer)

    backward: list[list[tuple[int, frozenset, RelationPath]]] = [[(t, frozenset(), ())]]
    for d in range(1, max_bwd + 1):
        layer = []
        for end, inter, steps in backward[d - 1]:
            for prev, step in _steps_into(graph, end, exclude_edge):
                if prev in endpoints or prev in inter:
                    continue
                layer.append((prev, inter | {prev}, (step,) + steps))
        backward.append(layer)

    by_meet: list[dict[int, list[tuple[frozenset, RelationPath]]]] = []
    for layer in backward:
        grouped: dict[int, list[tuple[frozenset, RelationPath]]] = defaultdict(list)
        for end, inter, steps in layer:
            grouped[end].append((inter, steps))
        by_meet.append(grouped)

    for length in range(2, max_len + 1):
        df = (length + 1) // 2
        db = length - df
        for meet, f_inter, f_steps in forward[df]:
            for b_inter, b_steps in by_meet[db].get(meet, ()):
                if f_inter & b_inter == {meet}:
                    results.add(f_steps + b_steps)
    return results


@dataclass
class PathFeatureMatrix:
    vocabulary: list[RelationPath]
    rows: np.ndarray  # (n_pairs, n_paths) uint8 one-hot
    pair_index: dict[tuple[int, int], int]
    query_relation: int
    max_len: int

    def row_for(self, h: int, t: int) -> np.ndarray:
        return self.rows[self.pair_index[(h, t)]]

    def path_id(self, path: RelationPath) -> int:
        return self.vocabulary.index(path)


def build_feature_matrix(graph, pairs, query_relation: int, max_len: int = 3,
                         path_cache: dict | None = None) -> PathFeatureMatrix:
    """One-hot relation-path features for entity pairs.

    For every pair the pair's own query-relation edge is excluded during
    extraction, and the bare single-step query-relation path never enters the
    vocabulary, so a fact cannot explain itself.  Vocabulary order is pair
    discovery order with lexicographic order within a pair.  `path_cache`
    (pair -> path set) amortizes extraction across repeated builds against
    the same graph and query relation.
    """
    if not pairs:
        raise ValueError("pairs must be non-empty")
    banned = (RelationStep(query_relation, True),)
    unique_pairs: list[tuple[int, int]] = []
    pair_index: dict[tuple[int, int], int] = {}
    per_pair: list[set[RelationPath]] = []
    for h, t in pairs:
        if (h, t) in pair_index:
            continue
        pair_index[(h, t)] = len(unique_pairs)
        unique_pairs.append((h, t))
        if path_cache is not None and (h, t) in path_cache:
            paths = path_cache[(h, t)]
        else:
            paths = extract_paths(graph, h, t, max_len, exclude_edge=Triple(h, query_relation, t))
            paths.discard(banned)
            if path_cache is not None:
                path_cache[(h, t)] = paths
        per_pair.append(paths)

    vocabulary: list[RelationPath] = []
    vocab_index: dict[RelationPath, int] = {}
    for paths in per_pair:
        for p in sorted(paths, key=path_sort_key):
            if p not in vocab_index:
                vocab_index[p] = len(vocabulary)
                vocabulary.append(p)

    rows = np.zeros((len(unique_pairs), len(vocabulary)), dtype=np.uint8)
    for i, paths in enumerate(per_pair):
        for p in paths:
            rows[i, vocab_index[p]] = 1
    return PathFeatureMatrix(vocabulary, rows, pair_index, query_relation, max_len)


def dump_feature_matrix(fm: PathFeatureMatrix, rows_path, vocab_path, relation_names=None) -> None:
    """Sparse dump: `pair_id<TAB>path_id,path_id,...` plus a vocabulary file."""
    with open(rows_path, "w", encoding="utf-8") as f:
        for (h, t), i in fm.pair_index.items():
            ids = ",".join(str(j) for j in np.flatnonzero(fm.rows[i]))
            f.write(f"{h}:{t}\t{ids}\n")
    with open(vocab_path, "w", encoding="utf-8") as f:
        for j, path in enumerate(fm.vocabulary):
            f.write(f"{j}\t{format_path(path, relation_names)}\n")
