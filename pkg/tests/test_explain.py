import itertools
from pathlib import Path

import numpy as np
import pytest

from kgexplain.data import Triple, Vocab
from kgexplain.embedding import EmbeddingModel, classify, score
from kgexplain.explain import (
    AgreementError,
    MissingTemplateError,
    TemplateSet,
    explain,
    ground_path,
    inflected,
    query_feature_row,
    render_paths_text,
    with_article,
)
from kgexplain.paths import RelationStep, build_augmented_graph
from kgexplain.surrogate import LocalTreeModel, TreeNode

from conftest import make_graph

GOLDEN = Path(__file__).parent / "golden"


def matrix_model(score_mats, thresholds=0.0):
    """Model whose raw score of (h, r, t) is exactly score_mats[r][h, t]."""
    s = np.asarray(score_mats, dtype=float)
    n_r, n_e, _ = s.shape
    return EmbeddingModel(
        entity_vectors=np.eye(n_e),
        relation_vectors=np.eye(n_r),
        core_tensor=s,
        thresholds=np.full(n_r, thresholds, dtype=float),
        rng_seed=0,
    )


def enumerate_groundings(m, q, path):
    """Oracle: try every assignment of intermediate entities."""
    n = m.n_entities
    results = []
    for mids in itertools.product(range(n), repeat=len(path) - 1):
        nodes = [q.head, *mids, q.tail]
        hops, plaus = [], []
        ok = True
        for i, step in enumerate(path):
            a, b = nodes[i], nodes[i + 1]
            tr = Triple(a, step.relation, b) if step.forward else Triple(b, step.relation, a)
            if not classify(m, tr):
                ok = False
                break
            hops.append((tr, step.forward))
            plaus.append(score(m, tr).plausibility)
        if ok:
            results.append((tuple(hops), float(np.prod(plaus))))
    return results


def leaf(klass):
    return TreeNode(klass=klass)


def single_split_tree(vocabulary, query=None):
    root = TreeNode(feature=0, left=leaf(False), right=leaf(True))
    return LocalTreeModel(query=query, root=root, vocabulary=vocabulary,
                          neighborhood_k=0, fidelity_on_train=1.0, max_depth=2, min_leaf=1)


class TestGroundPath:
    def test_single_step_base_case(self):
        s = np.full((1, 3, 3), -5.0)
        s[0, 0, 1] = 5.0
        m = matrix_model(s)
        q = Triple(0, 0, 1)
        got = ground_path(q, (RelationStep(0, True),), m, _aug_for(m, [(0, 0, 1)]))
        assert len(got) == 1
        assert got[0].hops == ((Triple(0, 0, 1), True),)
        # a path whose hop classifies false grounds to nothing
        s[0, 0, 1] = -5.0
        m2 = matrix_model(s)
        assert ground_path(q, (RelationStep(0, True),), m2, _aug_for(m2, [])) == []

    def test_matches_enumeration_oracle(self, rng):
        for trial in range(12):
            n_e, n_r = 5, 2
            s = rng.normal(scale=2.0, size=(n_r, n_e, n_e))
            m = matrix_model(s)
            aug = _aug_for(m, [])
            length = int(rng.integers(1, 4))
            path = tuple(
                RelationStep(int(rng.integers(n_r)), bool(rng.integers(2))) for _ in range(length)
            )
            q = Triple(int(rng.integers(n_e)), 0, int(rng.integers(n_e)))
            got = ground_path(q, path, m, aug, beam=None)
            expected = enumerate_groundings(m, q, path)
            assert {g.hops for g in got} == {h for h, _ in expected}
            exp_belief = dict(expected)
            for g in got:
                assert g.belief == pytest.approx(exp_belief[g.hops], abs=1e-12)

    def test_belief_is_product_of_plausibilities(self):
        s = np.full((1, 4, 4), -5.0)
        s[0, 0, 2] = 1.5
        s[0, 2, 1] = 0.7
        m = matrix_model(s)
        q = Triple(0, 0, 1)
        path = (RelationStep(0, True), RelationStep(0, True))
        got = ground_path(q, path, m, _aug_for(m, []))
        assert len(got) == 1
        p1 = score(m, Triple(0, 0, 2)).plausibility
        p2 = score(m, Triple(2, 0, 1)).plausibility
        assert got[0].belief == pytest.approx(p1 * p2, abs=1e-12)
        assert got[0].plausibilities == pytest.approx((p1, p2))

    def test_wide_beam_equals_exhaustive(self, rng):
        s = rng.normal(size=(1, 6, 6))
        m = matrix_model(s)
        aug = _aug_for(m, [])
        q = Triple(0, 0, 5)
        path = (RelationStep(0, True), RelationStep(0, False), RelationStep(0, True))
        wide = ground_path(q, path, m, aug, beam=m.n_entities ** 2)
        exhaustive = ground_path(q, path, m, aug, beam=None)
        assert [g.hops for g in wide] == [g.hops for g in exhaustive]

    def test_beam_results_subset_and_sorted(self, rng):
        s = rng.normal(size=(1, 6, 6))
        m = matrix_model(s)
        aug = _aug_for(m, [])
        q = Triple(0, 0, 5)
        path = (RelationStep(0, True), RelationStep(0, True))
        narrow = ground_path(q, path, m, aug, beam=2)
        full = {g.hops for g in ground_path(q, path, m, aug, beam=None)}
        assert {g.hops for g in narrow} <= full
        beliefs = [g.belief for g in narrow]
        assert beliefs == sorted(beliefs, reverse=True)


def _aug_for(m, fact_ids):
    names = [f"e{i}" for i in range(m.n_entities)]
    rels = [f"r{j}" for j in range(m.n_relations)]
    triples = [(names[h], rels[r], names[t]) for h, r, t in fact_ids]
    g = make_graph(triples or [(names[0], rels[0], names[1])],
                   extra_entities=names, extra_relations=rels)
    if not fact_ids:
        g.facts.clear()
        g.outgoing.clear()
        g.incoming.clear()
    return build_augmented_graph(g, m, k=0)


GENERIC_TEMPLATES = TemplateSet({
    "version": "test-v1",
    "relations": {
        f"r{j}": {"forward": f"{{head}} r{j} {{tail}}", "inverse": f"{{head}} r{j}-inv {{tail}}"}
        for j in range(4)
    },
})


class TestRendering:
    def test_used_to_exemplar(self):
        g = make_graph([("scrubber", "ObjUsedTo", "scrub")])
        templates = TemplateSet.household()
        text = templates.render_fact(Triple(0, 0, 1), True, g.entities, g.relations)
        assert text == "a scrubber is used to scrub"

    def test_vowel_article(self):
        assert with_article("apple") == "an apple"
        assert with_article("cleaning_rag") == "a cleaning rag"

    def test_inflections(self):
        assert inflected("mop", "ing") == "mopping"
        assert inflected("wipe", "ing") == "wiping"
        assert inflected("dust", "ing") == "dusting"
        assert inflected("mop", "ed") == "mopped"
        assert inflected("wipe", "ed") == "wiped"
        assert inflected("dry", "ed") == "dried"
        assert inflected("pick_up", "ing") == "picking up"

    def test_inverse_variant_used(self):
        g = make_graph([("towel", "ObjInLoc", "cabinet")])
        templates = TemplateSet.household()
        fwd = templates.render_fact(Triple(0, 0, 1), True, g.entities, g.relations)
        inv = templates.render_fact(Triple(0, 0, 1), False, g.entities, g.relations)
        assert fwd == "a towel is often in a cabinet"
        assert inv == "a cabinet often can contain a towel"

    def test_missing_template_raises(self):
        g = make_graph([("a", "UnknownRel", "b")])
        with pytest.raises(MissingTemplateError):
            GENERIC_TEMPLATES.render_fact(Triple(0, 0, 1), True, g.entities, g.relations)

    def test_household_templates_cover_schema(self):
        relations = Vocab(["HasEffect", "InverseActionOf", "InverseStateOf", "LocInRoom",
                           "ObjCanBe", "ObjInLoc", "ObjInRoom", "ObjOnLoc", "ObjUsedTo",
                           "ObjHasState", "OperatesOn"])
        TemplateSet.household().validate(relations)

    def test_validate_rejects_gaps(self):
        with pytest.raises(MissingTemplateError):
            GENERIC_TEMPLATES.validate(Vocab(["r0", "nope"]))


def cleaning_rag_fixture():
    g = make_graph([
        ("cleaning_rag", "ObjInLoc", "cabinet"),
        ("towel", "ObjInLoc", "cabinet"),
        ("towel", "ObjUsedTo", "wipe"),
        ("cleaning_rag", "ObjUsedTo", "wipe"),
    ])
    rag, cabinet, towel, wipe = (g.entities.id(x) for x in ("cleaning_rag", "cabinet", "towel", "wipe"))
    in_loc, used_to = g.relations.id("ObjInLoc"), g.relations.id("ObjUsedTo")
    s = np.full((2, 4, 4), -5.0)
    s[in_loc, rag, cabinet] = 5.0
    s[in_loc, towel, cabinet] = 5.0
    s[used_to, towel, wipe] = 5.0
    s[used_to, rag, wipe] = 4.0  # the query inference itself
    m = matrix_model(s)
    aug = build_augmented_graph(g, m, k=0)
    vocab = [(RelationStep(in_loc, True), RelationStep(in_loc, False), RelationStep(used_to, True))]
    tree = single_split_tree(vocab, query=Triple(rag, used_to, wipe))
    return g, m, aug, tree, Triple(rag, used_to, wipe)


class TestExplain:
    def test_cleaning_rag_golden(self):
        g, m, aug, tree, q = cleaning_rag_fixture()
        exp = explain(q, m, tree, aug, TemplateSet.household())
        assert exp.text == (GOLDEN / "explanation_cleaning_rag.txt").read_text()
        assert exp.predicted is True
        # the belief-best grounding chains rag -> cabinet -> towel -> wipe
        best = exp.grounded_paths[0]
        assert [t for t, _ in best.hops] == [
            g.triple("cleaning_rag", "ObjInLoc", "cabinet"),
            g.triple("towel", "ObjInLoc", "cabinet"),
            g.triple("towel", "ObjUsedTo", "wipe"),
        ]
        assert [fwd for _, fwd in best.hops] == [True, False, True]

    def test_dusting_golden(self):
        g = make_graph([
            ("wash_cloth", "ObjUsedTo", "dust"),
            ("wash_cloth", "OperatesOn", "stall"),
            ("stall", "ObjCanBe", "mop"),
            ("mop", "HasEffect", "clean"),
            ("dust", "HasEffect", "clean"),
        ])
        ids = {n: g.entities.id(n) for n in ("wash_cloth", "dust", "stall", "mop", "clean")}
        rel = {n: g.relations.id(n) for n in ("ObjUsedTo", "OperatesOn", "ObjCanBe", "HasEffect")}
        s = np.full((4, 5, 5), -5.0)
        s[rel["ObjUsedTo"], ids["wash_cloth"], ids["dust"]] = 5.0
        s[rel["OperatesOn"], ids["wash_cloth"], ids["stall"]] = 5.0
        s[rel["ObjCanBe"], ids["stall"], ids["mop"]] = 5.0
        s[rel["HasEffect"], ids["mop"], ids["clean"]] = 5.0
        s[rel["HasEffect"], ids["dust"], ids["clean"]] = 4.0
        m = matrix_model(s)
        aug = build_augmented_graph(g, m, k=0)
        vocab = [(
            RelationStep(rel["ObjUsedTo"], False),
            RelationStep(rel["OperatesOn"], True),
            RelationStep(rel["ObjCanBe"], True),
            RelationStep(rel["HasEffect"], True),
        )]
        tree = single_split_tree(vocab)
        q = Triple(ids["dust"], rel["HasEffect"], ids["clean"])
        exp = explain(q, m, tree, aug, TemplateSet.household())
        assert exp.text == (GOLDEN / "explanation_dusting.txt").read_text()

    def test_agreement_violation_refused(self):
        g, m, aug, tree, q = cleaning_rag_fixture()
        m.thresholds[:] = 10.0  # embedding now classifies the query false
        with pytest.raises(AgreementError):
            explain(q, m, tree, aug, TemplateSet.household())

    def test_single_leaf_tree_falls_back(self):
        g, m, aug, tree, q = cleaning_rag_fixture()
        lone = LocalTreeModel(query=q, root=leaf(True), vocabulary=tree.vocabulary,
                              neighborhood_k=0, fidelity_on_train=1.0, max_depth=1, min_leaf=1)
        exp = explain(q, m, lone, aug, TemplateSet.household())
        assert exp.grounded_paths == []
        assert exp.text.startswith("I could not find a chain of known facts")
        assert exp.text.endswith("it is possible that a cleaning rag is used to wipe.")

    def test_paths_rendered_in_belief_order(self):
        g = make_graph([("e0", "r0", "e1"), ("e0", "r1", "e1"), ("e0", "r2", "e1")])
        s = np.full((3, 2, 2), -5.0)
        s[0, 0, 1] = 0.5
        s[1, 0, 1] = 2.0
        s[2, 0, 1] = 1.0  # query relation
        m = matrix_model(s)
        aug = build_augmented_graph(g, m, k=0)
        vocab = [(RelationStep(0, True),), (RelationStep(1, True),)]
        root = TreeNode(feature=0, left=leaf(False),
                        right=TreeNode(feature=1, left=leaf(True), right=leaf(True)))
        tree = LocalTreeModel(query=None, root=root, vocabulary=vocab, neighborhood_k=0,
                              fidelity_on_train=1.0, max_depth=2, min_leaf=1)
        q = Triple(0, 2, 1)
        exp = explain(q, m, tree, aug, GENERIC_TEMPLATES)
        # the r1 grounding is more believable and must be narrated first
        assert exp.text.index("r1") < exp.text.index("r0")
        assert exp.grounded_paths[0].relation_path == vocab[1]

    def test_rendering_injective_on_corpus(self):
        g, m, aug, tree, q = cleaning_rag_fixture()
        exp = explain(q, m, tree, aug, TemplateSet.household())
        texts = [
            render_paths_text(q, [gp], TemplateSet.household(), g.entities, g.relations)
            for gp in exp.grounded_paths
        ]
        assert len(texts) == len(set(texts)) == 2

    def test_to_dict_schema(self):
        g, m, aug, tree, q = cleaning_rag_fixture()
        exp = explain(q, m, tree, aug, TemplateSet.household())
        doc = exp.to_dict(g.entities, g.relations)
        assert doc["query"] == {"head": "cleaning_rag", "relation": "ObjUsedTo", "tail": "wipe"}
        assert doc["template_version"] == "household-v1"
        hop = doc["paths"][0]["hops"][0]
        assert set(hop) == {"head", "relation", "tail", "plausibility", "direction"}
        assert 0.0 < hop["plausibility"] < 1.0


class TestQueryFeatureRow:
    def test_row_encodes_connectivity(self):
        g, m, aug, tree, q = cleaning_rag_fixture()
        row = query_feature_row(q, tree, aug)
        assert row.tolist() == [1]
        other_vocab = [(RelationStep(0, True), RelationStep(0, True))]
        other_tree = single_split_tree(other_vocab)
        assert query_feature_row(q, other_tree, aug).tolist() == [0]
