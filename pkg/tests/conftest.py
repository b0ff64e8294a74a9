import numpy as np
import pytest

from kgexplain.data import KnowledgeGraph, Triple, Vocab
from kgexplain.embedding import EmbeddingModel, TrainConfig


def make_graph(triple_names, extra_entities=(), extra_relations=()):
    """Build a graph from (head, relation, tail) name triples."""
    entities, relations = Vocab(), Vocab()
    triples = []
    for h, r, t in triple_names:
        triples.append(Triple(entities.add(h), relations.add(r), entities.add(t)))
    for e in extra_entities:
        entities.add(e)
    for r in extra_relations:
        relations.add(r)
    return KnowledgeGraph.from_triples(entities, relations, triples)


def make_model(n_entities, n_relations, d_e=4, d_r=4, seed=0, thresholds=None):
    """Random but deterministic model, handy when training is beside the point."""
    rng = np.random.default_rng(seed)
    m = EmbeddingModel(
        entity_vectors=rng.normal(size=(n_entities, d_e)),
        relation_vectors=rng.normal(size=(n_relations, d_r)),
        core_tensor=rng.normal(size=(d_r, d_e, d_e)),
        thresholds=np.zeros(n_relations) if thresholds is None else np.asarray(thresholds, dtype=float),
        rng_seed=seed,
        config=TrainConfig(d_e=d_e, d_r=d_r, epochs=1, seed=seed),
    )
    return m


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
