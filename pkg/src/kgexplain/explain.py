"""Grounding surrogate decision paths into fact chains and rendering text.

A relation path taken on the positive branch of a local tree is grounded by
walking the augmented graph from both query endpoints, keeping only hops the
embedding classifies true.  Each grounded chain carries a belief equal to the
product of its hop plausibilities; chains render into templated sentences.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Triple, Vocab
from .embedding import EmbeddingModel, classify, sigmoid
from .paths import AugmentedGraph, RelationPath, RelationStep, extract_paths
from .surrogate import LocalTreeModel, classify_surrogate


class AgreementError(RuntimeError):
    """Embedding and surrogate disagree on the query; refusing to explain."""


class MissingTemplateError(KeyError):
    pass


VOWELS = "aeiou"


def surface(name: str) -> str:
    return name.replace("_", " ")


def with_article(name: str) -> str:
    text = surface(name)
    article = "an" if text[:1].lower() in VOWELS else "a"
    return f"{article} {text}"


def _inflect(word: str, kind: str) -> str:
    """Tiny deterministic gerund/past-participle table for action words."""
    if kind == "ing":
        if word.endswith("e") and not word.endswith("ee"):
            return word[:-1] + "ing"
        if _doubles_final(word):
            return word + word[-1] + "ing"
        return word + "ing"
    if word.endswith("e"):
        return word + "d"
    if len(word) > 1 and word.endswith("y") and word[-2] not in VOWELS:
        return word[:-1] + "ied"
    if _doubles_final(word):
        return word + word[-1] + "ed"
    return word + "ed"


def _doubles_final(word: str) -> bool:
    if len(word) < 3:
        return False
    a, b, c = word[-3], word[-2], word[-1]
    return c not in VOWELS and c not in "wxy" and b in VOWELS and a not in VOWELS


def inflected(name: str, kind: str) -> str:
    words = surface(name).split(" ")
    words[0] = _inflect(words[0], kind)
    return " ".join(words)


class TemplateSet:
    """Per-relation phrase templates with forward and inverse variants.

    Slots: {head}/{tail} bare, {a_head}/{a_tail} with an indefinite article,
    {head_ing}/{tail_ing} gerunds, {head_ed}/{tail_ed} past participles.  For
    an inverse hop the surface head is the edge's tail entity.
    """

    def __init__(self, doc: dict):
        self.version: str = doc["version"]
        self.relations: dict[str, dict[str, str]] = doc["relations"]
        self.intro: str = doc.get("intro", "I know that ")
        self.conclusion: str = doc.get("conclusion", "Therefore, it is possible that ")
        self.fallback: str = doc.get(
            "fallback", "I could not find a chain of known facts supporting this. Still, it is possible that "
        )

    @classmethod
    def load(cls, path) -> "TemplateSet":
        with open(path, encoding="utf-8") as f:
            return cls(json.load(f))

    @classmethod
    def household(cls) -> "TemplateSet":
        return cls.load(Path(__file__).parent / "templates" / "household.json")

    def validate(self, relations: Vocab) -> None:
        for name in relations:
            entry = self.relations.get(name)
            if not entry or "forward" not in entry or "inverse" not in entry:
                raise MissingTemplateError(f"relation {name!r} lacks forward/inverse templates")

    def phrase(self, relation_name: str, forward: bool) -> str:
        entry = self.relations.get(relation_name)
        if entry is None:
            raise MissingTemplateError(f"no template for relation {relation_name!r}")
        key = "forward" if forward else "inverse"
        if key not in entry:
            raise MissingTemplateError(f"no {key} template for relation {relation_name!r}")
        return entry[key]

    def render_fact(self, t: Triple, forward: bool, entities: Vocab, relations: Vocab) -> str:
        head_name = entities.name(t.head)
        tail_name = entities.name(t.tail)
        if not forward:  # surface subject of an inverse hop is the edge tail
            head_name, tail_name = tail_name, head_name
        return self.phrase(relations.name(t.relation), forward).format(
            head=surface(head_name),
            tail=surface(tail_name),
            a_head=with_article(head_name),
            a_tail=with_article(tail_name),
            head_ing=inflected(head_name, "ing"),
            tail_ing=inflected(tail_name, "ing"),
            head_ed=inflected(head_name, "ed"),
            tail_ed=inflected(tail_name, "ed"),
        )


# (triple, forward) per hop, in chain order from query head to query tail
Hop = tuple[Triple, bool]


@dataclass
class GroundedPath:
    query: Triple
    relation_path: RelationPath
    hops: tuple[Hop, ...]
    belief: float
    plausibilities: tuple[float, ...] = ()

    def sort_key(self):
        return (-self.belief, tuple((t.head, t.relation, t.tail, fwd) for t, fwd in self.hops))


@dataclass
class Explanation:
    query: Triple
    predicted: bool
    grounded_paths: list[GroundedPath]
    text: str
    template_version: str

    def to_dict(self, entities: Vocab, relations: Vocab) -> dict:
        def name_triple(t: Triple):
            return {"head": entities.name(t.head), "relation": relations.name(t.relation),
                    "tail": entities.name(t.tail)}

        return {
            "query": name_triple(self.query),
            "predicted": self.predicted,
            "paths": [
                {
                    "steps": [
                        {"relation": relations.name(s.relation),
                         "direction": "forward" if s.forward else "inverse"}
                        for s in gp.relation_path
                    ],
                    "hops": [
                        {**name_triple(t), "plausibility": gp.plausibilities[i],
                         "direction": "forward" if fwd else "inverse"}
                        for i, (t, fwd) in enumerate(gp.hops)
                    ],
                    "belief": gp.belief,
                }
                for gp in self.grounded_paths
            ],
            "text": self.text,
            "template_version": self.template_version,
        }


def _completion_scores(m: EmbeddingModel, node: int, relation: int, node_is_head: bool) -> np.ndarray:
    mat = m.relation_matrix(relation)
    if node_is_head:
        return m.entity_vectors @ (m.entity_vectors[node] @ mat)
    return m.entity_vectors @ (mat @ m.entity_vectors[node])


def ground_path(q: Triple, p: RelationPath, m: EmbeddingModel, graph_aug: AugmentedGraph,
                beam: int | None = 32) -> list[GroundedPath]:
    """Entity groundings of relation path `p` between the query endpoints.

    Forward and backward frontiers consume the path from its two ends; every
    hop must classify true, candidates come from all entities, and at most
    `beam` partials per depth survive ranked by running belief (None means
    exhaustive).  Returns complete chains sorted by belief, ties broken by
    hop ids.
    """
    if not p:
        raise ValueError("relation path must be non-empty")
    if beam is not None and beam < 1:
        raise ValueError("beam must be >= 1")
    length = len(p)
    n_fwd = (length + 1) // 2
    n_bwd = length - n_fwd

    def expand(partials, step: RelationStep, outward_from_head: bool):
        out = []
        for node, hops, belief, plaus_list in partials:
            # orient the candidate hop: moving away from the head consumes the
            # step left-to-right, moving up from the tail consumes it reversed
            if outward_from_head:
                hop_head_is_node = step.forward
            else:
                hop_head_is_node = not step.forward
            scores = _completion_scores(m, node, step.relation, hop_head_is_node)
            keep = np.flatnonzero(scores >= m.thresholds[step.relation])
            for e in keep:
                e = int(e)
                hop_triple = (Triple(node, step.relation, e) if hop_head_is_node
                              else Triple(e, step.relation, node))
                plaus = float(sigmoid(scores[e]))
                hop = (hop_triple, step.forward)
                if outward_from_head:
                    out.append((e, hops + (hop,), belief * plaus, plaus_list + (plaus,)))
                else:
                    out.append((e, (hop,) + hops, belief * plaus, (plaus,) + plaus_list))
        out.sort(key=lambda x: (-x[2], tuple((t.head, t.relation, t.tail, f) for t, f in x[1])))
        if beam is not None:
            out = out[:beam]
        return out

    forward = [(q.head, (), 1.0, ())]
    for i in range(n_fwd):
        forward = expand(forward, p[i], outward_from_head=True)
    backward = [(q.tail, (), 1.0, ())]
    for i in range(n_bwd):
        backward = expand(backward, p[length - 1 - i], outward_from_head=False)

    by_meet: dict[int, list] = {}
    for node, hops, belief, plaus in backward:
        by_meet.setdefault(node, []).append((hops, belief, plaus))

    results = []
    for node, hops, belief, plaus in forward:
        for b_hops, b_belief, b_plaus in by_meet.get(node, ()):
            results.append(GroundedPath(q, p, hops + b_hops, belief * b_belief, plaus + b_plaus))
    results.sort(key=GroundedPath.sort_key)
    return results


def query_feature_row(q: Triple, model: LocalTreeModel, graph_aug: AugmentedGraph) -> np.ndarray:
    """Encode the query pair against the tree's path vocabulary."""
    max_len = max((len(p) for p in model.vocabulary), default=1)
    found = extract_paths(graph_aug, q.head, q.tail, max_len,
                          exclude_edge=Triple(q.head, q.relation, q.tail))
    return np.array([1 if p in found else 0 for p in model.vocabulary], dtype=np.uint8)


def render_paths_text(query: Triple, paths: list[GroundedPath], templates: TemplateSet,
                      entities: Vocab, relations: Vocab) -> str:
    query_clause = templates.render_fact(query, True, entities, relations)
    if not paths:
        return f"{templates.fallback}{query_clause}."
    sentences = []
    for gp in paths:
        clauses = [templates.render_fact(t, fwd, entities, relations) for t, fwd in gp.hops]
        if len(clauses) == 1:
            body = clauses[0]
        elif len(clauses) == 2:
            body = f"{clauses[0]} and {clauses[1]}"
        else:
            body = ", ".join(clauses[:-1]) + f", and {clauses[-1]}"
        sentences.append(f"{templates.intro}{body}.")
    sentences.append(f"{templates.conclusion}{query_clause}.")
    return " ".join(sentences)


def explain(q: Triple, m: EmbeddingModel, surrogate: LocalTreeModel, graph_aug: AugmentedGraph,
            templates: TemplateSet, n_paths: int = 3, beam: int | None = 32,
            row: np.ndarray | None = None) -> Explanation:
    """Ground the positive-branch decision-path features of the surrogate and
    render them, most believable chain first."""
    if row is None:
        row = query_feature_row(q, surrogate, graph_aug)
    predicted, decision_path = classify_surrogate(surrogate, row)
    if predicted != classify(m, q):
        raise AgreementError(
            "surrogate and embedding disagree on the query classification; no explanation produced"
        )

    positive_features = [f for f, taken in decision_path if taken][:n_paths]
    relation_paths = [surrogate.vocabulary[f] for f in positive_features]

    all_grounded: list[GroundedPath] = []
    best_per_path: list[GroundedPath] = []
    for rp in relation_paths:
        grounded = ground_path(q, rp, m, graph_aug, beam)
        all_grounded.extend(grounded)
        if grounded:
            best_per_path.append(grounded[0])
    all_grounded.sort(key=GroundedPath.sort_key)
    best_per_path.sort(key=GroundedPath.sort_key)

    entities, relations = graph_aug.base.entities, graph_aug.base.relations
    text = render_paths_text(q, best_per_path, templates, entities, relations)
    return Explanation(q, predicted, all_grounded, text, templates.version)
