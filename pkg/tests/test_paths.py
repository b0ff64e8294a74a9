import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kgexplain.data import KnowledgeGraph, Triple, Vocab
from kgexplain.embedding import classify_batch, nearest_neighbors, score
from kgexplain.paths import (
    RelationStep,
    build_augmented_graph,
    build_feature_matrix,
    dump_feature_matrix,
    extract_paths,
    format_path,
    reverse_path,
)

from conftest import make_graph, make_model


def dfs_paths(graph, h, t, max_len, exclude_edge=None):
    """Oracle: exhaustive DFS over node walks from h to t.

    A walk's intermediate nodes are distinct and never equal either endpoint;
    the endpoints themselves may coincide.  Every edge is traversable in both
    directions, inverse steps marked.
    """
    results = set()

    def neighbors(node):
        for tr in graph.outgoing.get(node, ()):
            if tr != exclude_edge:
                yield tr.tail, RelationStep(tr.relation, True)
        for tr in graph.incoming.get(node, ()):
            if tr != exclude_edge:
                yield tr.head, RelationStep(tr.relation, False)

    def walk(node, visited, steps):
        if len(steps) == max_len:
            return
        for nxt, step in neighbors(node):
            if nxt == t:
                results.add(steps + (step,))
            if nxt == h or nxt == t or nxt in visited:
                continue
            walk(nxt, visited | {nxt}, steps + (step,))

    walk(h, frozenset(), ())
    return results


def ids_graph(n_entities, n_relations, edges):
    entities = Vocab(f"e{i}" for i in range(n_entities))
    relations = Vocab(f"r{i}" for i in range(n_relations))
    return KnowledgeGraph.from_triples(entities, relations, [Triple(*e) for e in edges])


def random_graph(rng, max_nodes=8, max_rels=4):
    n = int(rng.integers(2, max_nodes + 1))
    r = int(rng.integers(1, max_rels + 1))
    n_edges = int(rng.integers(1, 2 * n + 1))
    edges = set()
    for _ in range(n_edges):
        edges.add((int(rng.integers(n)), int(rng.integers(r)), int(rng.integers(n))))
    return ids_graph(n, r, edges), n


class TestExtractPaths:
    def test_two_routes(self):
        g = make_graph([("A", "r1", "B"), ("B", "r2", "C"), ("A", "r3", "C")])
        a, c = g.entities.id("A"), g.entities.id("C")
        r1, r2, r3 = (g.relations.id(x) for x in ("r1", "r2", "r3"))
        got = extract_paths(g, a, c, 2)
        assert got == {
            (RelationStep(r3, True),),
            (RelationStep(r1, True), RelationStep(r2, True)),
        }

    def test_same_endpoint_without_self_loop_is_empty(self):
        g = make_graph([("A", "r", "B")])
        a = g.entities.id("A")
        assert extract_paths(g, a, a, 1) == set()

    def test_self_loop_found_for_same_endpoint(self):
        g = make_graph([("A", "r", "A")])
        a = g.entities.id("A")
        assert extract_paths(g, a, a, 1) == {(RelationStep(0, True),), (RelationStep(0, False),)}

    def test_inverse_traversal(self):
        g = make_graph([("B", "r1", "A")])
        a, b = g.entities.id("A"), g.entities.id("B")
        assert extract_paths(g, a, b, 1) == {(RelationStep(0, False),)}

    def test_excluded_edge_not_traversed(self):
        g = make_graph([("A", "q", "C"), ("A", "r", "B"), ("B", "s", "C")])
        a, c = g.entities.id("A"), g.entities.id("C")
        q = g.relations.id("q")
        got = extract_paths(g, a, c, 2, exclude_edge=Triple(a, q, c))
        assert (RelationStep(q, True),) not in got
        assert (RelationStep(g.relations.id("r"), True), RelationStep(g.relations.id("s"), True)) in got

    def test_matches_dfs_oracle_on_random_graphs(self, rng):
        for _ in range(60):
            g, n = random_graph(rng)
            h, t = int(rng.integers(n)), int(rng.integers(n))
            max_len = int(rng.integers(1, 4))
            assert extract_paths(g, h, t, max_len) == dfs_paths(g, h, t, max_len)

    def test_direction_symmetric(self, rng):
        for _ in range(30):
            g, n = random_graph(rng)
            h, t = int(rng.integers(n)), int(rng.integers(n))
            fwd = extract_paths(g, h, t, 3)
            bwd = extract_paths(g, t, h, 3)
            assert fwd == {reverse_path(p) for p in bwd}

    @settings(max_examples=60, deadline=None)
    @given(
        edges=st.lists(
            st.tuples(st.integers(0, 5), st.integers(0, 2), st.integers(0, 5)),
            min_size=1, max_size=14,
        ),
        h=st.integers(0, 5), t=st.integers(0, 5), max_len=st.integers(1, 3),
    )
    def test_oracle_equivalence_property(self, edges, h, t, max_len):
        g = ids_graph(6, 3, set(edges))
        assert extract_paths(g, h, t, max_len) == dfs_paths(g, h, t, max_len)


class TestFeatureMatrix:
    def test_disjoint_pairs_block_diagonal(self):
        g = make_graph([("A", "r1", "B"), ("C", "r2", "D")])
        pairs = [(g.entities.id("A"), g.entities.id("B")), (g.entities.id("C"), g.entities.id("D"))]
        fm = build_feature_matrix(g, pairs, query_relation=g.relations.add("q"), max_len=2)
        assert fm.rows.shape == (2, 2)
        assert fm.rows[0] @ fm.rows[1] == 0
        assert fm.rows.sum() == 2

    def test_bits_match_oracle(self, rng):
        for _ in range(20):
            g, n = random_graph(rng, max_nodes=6)
            q = 0
            pairs = [(int(rng.integers(n)), int(rng.integers(n))) for _ in range(4)]
            fm = build_feature_matrix(g, pairs, query_relation=q, max_len=3)
            for h, t in pairs:
                expected = dfs_paths(g, h, t, 3, exclude_edge=Triple(h, q, t))
                expected.discard((RelationStep(q, True),))
                got = {fm.vocabulary[j] for j in np.flatnonzero(fm.row_for(h, t))}
                assert got == expected

    def test_vocabulary_excludes_bare_query_relation(self):
        g = make_graph([("A", "q", "B"), ("C", "q", "B"), ("A", "r", "C")])
        q = g.relations.id("q")
        pairs = [(g.entities.id("A"), g.entities.id("B")), (g.entities.id("C"), g.entities.id("B"))]
        fm = build_feature_matrix(g, pairs, query_relation=q, max_len=2)
        assert (RelationStep(q, True),) not in fm.vocabulary
        # but composite paths through q edges survive
        assert any(len(p) == 2 for p in fm.vocabulary)

    def test_duplicate_pairs_collapse(self):
        g = make_graph([("A", "r", "B")])
        a, b = g.entities.id("A"), g.entities.id("B")
        fm = build_feature_matrix(g, [(a, b), (a, b)], query_relation=g.relations.add("q"), max_len=1)
        assert fm.rows.shape[0] == 1

    def test_rebuild_bit_identical(self, rng):
        g, n = random_graph(rng, max_nodes=7)
        pairs = [(int(rng.integers(n)), int(rng.integers(n))) for _ in range(5)]
        fm1 = build_feature_matrix(g, pairs, query_relation=0, max_len=3)
        fm2 = build_feature_matrix(g, pairs, query_relation=0, max_len=3)
        assert fm1.vocabulary == fm2.vocabulary
        assert np.array_equal(fm1.rows, fm2.rows)

    def test_dump_files(self, tmp_path):
        g = make_graph([("A", "r1", "B"), ("B", "r2", "C")])
        pairs = [(g.entities.id("A"), g.entities.id("C"))]
        fm = build_feature_matrix(g, pairs, query_relation=g.relations.add("q"), max_len=2)
        dump_feature_matrix(fm, tmp_path / "rows.tsv", tmp_path / "vocab.tsv", g.relations)
        vocab_text = (tmp_path / "vocab.tsv").read_text()
        assert "r1.fwd/r2.fwd" in vocab_text
        assert (tmp_path / "rows.tsv").read_text().strip().endswith("0")


class TestAugmentedGraph:
    def test_k_zero_keeps_only_true_facts(self):
        g = make_graph([("A", "r", "B"), ("B", "r", "C"), ("C", "r", "A")])
        m = make_model(3, 1, seed=4)
        facts = sorted(g.facts)
        scores = [score(m, t).raw_score for t in facts]
        m.thresholds[0] = sorted(scores)[1]  # one fact lands below
        ag = build_augmented_graph(g, m, k=0)
        assert ag.added_facts == set()
        assert ag.kept_facts == {t for t in facts if score(m, t).raw_score >= m.thresholds[0]}
        assert len(ag.kept_facts) == 2

    def test_false_base_fact_absent(self):
        g = make_graph([("A", "r", "B")])
        m = make_model(2, 1, seed=1)
        m.thresholds[0] = score(m, Triple(0, 0, 1)).raw_score + 1.0
        ag = build_augmented_graph(g, m, k=0)
        assert Triple(0, 0, 1) not in ag.facts

    def test_substitutions_match_enumeration_oracle(self, rng):
        for seed in range(8):
            g = make_graph([("A", "r", "B")], extra_entities=["C", "D", "E"])
            m = make_model(5, 1, seed=seed)
            m.thresholds[0] = float(np.median(m.entity_vectors))  # arbitrary cutoff
            k = 2
            ag = build_augmented_graph(g, m, k=k)

            base = Triple(0, 0, 1)
            candidates = set()
            for h2 in nearest_neighbors(m, base.head, k):
                candidates.add(Triple(h2, base.relation, base.tail))
            for t2 in nearest_neighbors(m, base.tail, k):
                candidates.add(Triple(base.head, base.relation, t2))
            candidates -= g.facts
            candidates = sorted(candidates)
            expected = {c for c, ok in zip(candidates, classify_batch(m, candidates)) if ok}
            assert ag.added_facts == expected
            assert len(ag.added_facts) <= 2 * k

    def test_added_facts_all_classified_true_and_disjoint(self, rng):
        g = make_graph([("A", "r", "B"), ("B", "s", "C"), ("C", "r", "D")])
        m = make_model(4, 2, seed=3)
        m.thresholds[:] = float(np.median([score(m, t).raw_score for t in g.facts]))
        ag = build_augmented_graph(g, m, k=2)
        added = sorted(ag.added_facts)
        assert all(classify_batch(m, added))
        assert not (ag.added_facts & g.facts)
        for t in ag.added_facts:
            assert ag.provenance(t) == "neighbor_substituted"

    def test_head_only_mode(self):
        g = make_graph([("A", "r", "B")], extra_entities=["C"])
        m = make_model(3, 1, seed=2)
        m.thresholds[0] = -1e9  # everything classifies true
        ag = build_augmented_graph(g, m, k=1, substitution_mode="head_only")
        assert all(t.tail == 1 for t in ag.added_facts)
