"""Noise-injection and correction-loop experiment engine.

Corrupts a fraction of train facts per relation, trains an embedding on the
noisy data, collects (simulated or human) per-fact corrections through the
5-option interface, applies them, retrains, and reports the link-prediction
delta on the clean dataset.  Per-corruption randomness is keyed by the
corruption index so a sweep over corrector accuracies sees nested
restoration sets (common random numbers) instead of independent noise.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .data import DatasetSplits, KnowledgeGraph, LabeledTriple, Triple
from .embedding import (
    EmbeddingModel,
    TrainConfig,
    classify,
    link_prediction,
    train,
)
from .explain import AgreementError, Explanation, TemplateSet, explain
from .paths import build_augmented_graph, build_feature_matrix
from .surrogate import MODES, SurrogateConfig, build_pool, evaluate_fidelity, fit_tree, select_neighborhood

NONE_OF_ABOVE = None  # the fifth option


@dataclass(frozen=True)
class CorruptionItem:
    original: Triple
    corrupted: Triple
    slot: str  # which position was replaced: "head" or "tail"


@dataclass
class CorruptionPlan:
    rate: float
    seed: int
    items: list[CorruptionItem]

    def by_corrupted(self) -> dict[Triple, CorruptionItem]:
        return {item.corrupted: item for item in self.items}


@dataclass
class CorrectionRecord:
    explanation_id: str
    hop: Triple  # the presented fact
    options: list  # 5 entries: presented, 3 alternates, None (=none of the above)
    chosen: int
    source: str = "simulated"
    timestamp: float = field(default_factory=time.time)

    def __post_init__(self):
        if len(self.options) != 5:
            raise ValueError("exactly 5 options required")
        if not 0 <= self.chosen < 5:
            raise ValueError("chosen option out of range")


@dataclass
class SimulatedCorrector:
    accuracy: float
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.accuracy <= 1.0:
            raise ValueError("accuracy must be in [0, 1]")


def make_corruption_plan(splits: DatasetSplits, rate: float, seed: int,
                         n_entities: int | None = None) -> CorruptionPlan:
    """Pick floor(rate * count) train facts per relation (at least one when
    any exist and rate > 0) and corrupt one slot of each with a uniformly
    random distinct entity, rejecting collisions with known positives."""
    if not 0.0 <= rate <= 1.0:
        raise ValueError("rate must be in [0, 1]")
    train_pos = splits.positives("train")
    known = splits.all_positive_triples()
    if n_entities is None:
        n_entities = max(max(t.head, t.tail) for t in known) + 1
    rng = np.random.default_rng(seed)

    by_relation: dict[int, list[Triple]] = {}
    for t in train_pos:
        by_relation.setdefault(t.relation, []).append(t)

    items: list[CorruptionItem] = []
    taken: set[Triple] = set()
    if rate > 0.0:
        for r in sorted(by_relation):
            facts = by_relation[r]
            n = max(1, int(rate * len(facts)))
            picked = rng.choice(len(facts), size=min(n, len(facts)), replace=False)
            for i in sorted(int(x) for x in picked):
                original = facts[i]
                for _attempt in range(200):
                    corrupt_head = bool(rng.integers(2))
                    repl = int(rng.integers(n_entities))
                    current = original.head if corrupt_head else original.tail
                    if repl == current:
                        continue
                    cand = (Triple(repl, r, original.tail) if corrupt_head
                            else Triple(original.head, r, repl))
                    if cand in known or cand in taken:
                        continue
                    taken.add(cand)
                    items.append(CorruptionItem(original, cand, "head" if corrupt_head else "tail"))
                    break
                else:
                    raise RuntimeError("could not find a non-colliding corruption")
    return CorruptionPlan(rate, seed, items)


def apply_corruption_plan(splits: DatasetSplits, plan: CorruptionPlan) -> DatasetSplits:
    """Replace each planned train fact with its corrupted version, in place in
    the split order; valid/test are untouched."""
    mapping = {item.original: item.corrupted for item in plan.items}
    new_train = [
        LabeledTriple(mapping.get(lt.triple, lt.triple), lt.label) if lt.label else lt
        for lt in splits.train
    ]
    return DatasetSplits(train=new_train, valid=list(splits.valid), test=list(splits.test))


def propose_options(hop: Triple, m: EmbeddingModel, slot: str) -> list:
    """The presented fact, the top-3 scored replacements of its `slot` entity
    (excluding the presented one), and none-of-the-above."""
    if slot not in ("head", "tail"):
        raise ValueError("slot must be 'head' or 'tail'")
    if m.n_entities < 4:
        raise ValueError("need at least 3 candidate replacement entities")
    mat = m.relation_matrix(hop.relation)
    if slot == "head":
        scores = m.entity_vectors @ (mat @ m.entity_vectors[hop.tail])
        current = hop.head
    else:
        scores = m.entity_vectors @ (m.entity_vectors[hop.head] @ mat)
        current = hop.tail
    order = np.argsort(-scores, kind="stable")
    alternates = []
    for e in order:
        e = int(e)
        if e == current:
            continue
        alternates.append(Triple(e, hop.relation, hop.tail) if slot == "head"
                          else Triple(hop.head, hop.relation, e))
        if len(alternates) == 3:
            break
    return [hop, *alternates, NONE_OF_ABOVE]


def correct_choice_index(options: list, original: Triple) -> int:
    """Ground-truth-consistent pick: the original fact when offered, else
    none-of-the-above."""
    for i, opt in enumerate(options[:4]):
        if opt == original:
            return i
    return 4


def simulate_corrections(plan: CorruptionPlan, m: EmbeddingModel,
                         corrector: SimulatedCorrector) -> list[CorrectionRecord]:
    """One record per planned corruption; with probability `accuracy` the
    corrector picks the ground-truth-consistent option, else a uniformly
    random wrong one.  Draws are keyed per corruption index, so different
    accuracies with one seed share their randomness."""
    records = []
    for i, item in enumerate(plan.items):
        options = propose_options(item.corrupted, m, item.slot)
        right = correct_choice_index(options, item.original)
        rng = np.random.default_rng(np.random.SeedSequence((corrector.seed, i)))
        if rng.uniform() < corrector.accuracy:
            chosen = right
        else:
            wrong = [j for j in range(5) if j != right]
            chosen = wrong[int(rng.integers(4))]
        records.append(CorrectionRecord(
            explanation_id=f"corruption-{i}", hop=item.corrupted, options=options,
            chosen=chosen, source="simulated",
        ))
    return records


def apply_corrections(splits_hat: DatasetSplits, plan: CorruptionPlan,
                      records: list[CorrectionRecord], wrong_choice_mode: str = "retain",
                      ignore_unknown: bool = False) -> DatasetSplits:
    """Fold correction records back into the corrupted dataset.

    A record whose chosen option is the ground-truth restoration replaces the
    corrupted fact with the original; choosing none-of-the-above when the
    original was not offered drops the corrupted fact; any other wrong choice
    retains the corruption, or substitutes the chosen fact under
    wrong_choice_mode="replace".  The first record per fact wins, so
    reapplying duplicates changes nothing.
    """
    if wrong_choice_mode not in ("retain", "replace"):
        raise ValueError("wrong_choice_mode must be 'retain' or 'replace'")
    by_corrupted = plan.by_corrupted()
    decisions: dict[Triple, Triple | None] = {}  # corrupted -> replacement (None = drop)
    for rec in records:
        item = by_corrupted.get(rec.hop)
        if item is None:
            if ignore_unknown:
                continue
            raise KeyError(f"record {rec.explanation_id} references a fact outside the corruption plan")
        if rec.hop in decisions:
            continue
        right = correct_choice_index(rec.options, item.original)
        if rec.chosen == right:
            decisions[rec.hop] = item.original if right < 4 else None
        elif rec.chosen == 4 or wrong_choice_mode == "retain":
            decisions[rec.hop] = rec.hop
        else:
            decisions[rec.hop] = rec.options[rec.chosen]

    new_train = []
    for lt in splits_hat.train:
        if lt.label and lt.triple in decisions:
            target = decisions[lt.triple]
            if target is None:
                continue
            new_train.append(LabeledTriple(target, True))
        else:
            new_train.append(lt)
    return DatasetSplits(train=new_train, valid=list(splits_hat.valid), test=list(splits_hat.test))


def explain_misclassified(splits: DatasetSplits, graph: KnowledgeGraph, m: EmbeddingModel,
                          templates: TemplateSet, surrogate_cfg: SurrogateConfig | None = None,
                          limit: int = 10, extra_queries: list[Triple] | None = None,
                          ) -> list[tuple[Triple, Explanation]]:
    """Explanations for test facts the embedding got wrong, where the local
    surrogate agrees with the embedding's (wrong) classification."""
    cfg = surrogate_cfg or SurrogateConfig()
    # extra queries (suspect beliefs handed in by the caller) come first: they
    # are the actionable ones when the store is capped
    queries = [t for t in (extra_queries or []) if classify(m, t)]
    queries += [lt.triple for lt in splits.test if classify(m, lt.triple) != lt.label]

    graph_aug = build_augmented_graph(graph, m, cfg.k_substitution, cfg.substitution_mode)
    rng = np.random.default_rng(cfg.seed)
    out: list[tuple[Triple, Explanation]] = []
    pools: dict[int, list[Triple]] = {}
    for q in queries:
        if len(out) >= limit:
            break
        r = q.relation
        if r not in pools:
            pools[r] = build_pool(r, graph, m, rng, cfg.pool_corruptions, cfg.neighbor_candidates)
        pool = [t for t in pools[r] if t != q]
        if not pool:
            continue
        pairs = [(t.head, t.tail) for t in pool] + [(q.head, q.tail)]
        features = build_feature_matrix(graph_aug, pairs, r, cfg.max_path_length)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            nbhd = select_neighborhood(q, m, pool, cfg.k_grid, graph_aug, features=features, cfg=cfg)
        tree = fit_tree(nbhd, features, cfg.max_depth, cfg.min_leaf)
        row = features.row_for(q.head, q.tail)
        try:
            exp = explain(q, m, tree, graph_aug, templates, row=row)
        except AgreementError:
            continue  # only agreeing classifications get explained
        out.append((q, exp))
    return out


def _triple_names(t: Triple, graph: KnowledgeGraph) -> dict:
    h, r, tail = graph.describe(t)
    return {"head": h, "relation": r, "tail": tail}


def _triple_from_names(doc: dict, graph: KnowledgeGraph) -> Triple:
    return graph.triple(doc["head"], doc["relation"], doc["tail"])


def plan_to_dict(plan: CorruptionPlan, graph: KnowledgeGraph) -> dict:
    return {
        "rate": plan.rate,
        "seed": plan.seed,
        "items": [
            {"original": _triple_names(i.original, graph),
             "corrupted": _triple_names(i.corrupted, graph), "slot": i.slot}
            for i in plan.items
        ],
    }


def plan_from_dict(doc: dict, graph: KnowledgeGraph) -> CorruptionPlan:
    return CorruptionPlan(
        rate=doc["rate"], seed=doc["seed"],
        items=[CorruptionItem(_triple_from_names(i["original"], graph),
                              _triple_from_names(i["corrupted"], graph), i["slot"])
               for i in doc["items"]],
    )


def record_to_dict(rec: CorrectionRecord, graph: KnowledgeGraph) -> dict:
    return {
        "explanation_id": rec.explanation_id,
        "hop": _triple_names(rec.hop, graph),
        "options": [None if o is None else _triple_names(o, graph) for o in rec.options],
        "chosen": rec.chosen,
        "source": rec.source,
        "timestamp": rec.timestamp,
    }


def record_from_dict(doc: dict, graph: KnowledgeGraph) -> CorrectionRecord:
    return CorrectionRecord(
        explanation_id=doc["explanation_id"],
        hop=_triple_from_names(doc["hop"], graph),
        options=[None if o is None else _triple_from_names(o, graph) for o in doc["options"]],
        chosen=doc["chosen"],
        source=doc.get("source", "human"),
        timestamp=doc.get("timestamp", 0.0),
    )


@dataclass
class ExperimentConfig:
    rate: float = 0.3
    accuracy: float = 0.866
    sweep: tuple = ()
    seeds: tuple = (0,)
    wrong_choice_mode: str = "retain"
    train: TrainConfig = field(default_factory=TrainConfig)
    fidelity_modes: tuple = ()
    surrogate: SurrogateConfig = field(default_factory=SurrogateConfig)
    max_explanations: int = 0
    templates: TemplateSet | None = None


@dataclass
class ExperimentReport:
    mrr_corrupted: float
    mrr_corrected: float
    relative_improvement: float
    correction_accuracy_used: float
    curve: list[tuple[float, float]]
    per_seed: list[dict]
    fidelity_by_mode: dict[str, float] = field(default_factory=dict)
    n_explanations: int = 0

    def to_dict(self) -> dict:
        return {
            "mrr_corrupted": self.mrr_corrupted,
            "mrr_corrected": self.mrr_corrected,
            "relative_improvement": self.relative_improvement,
            "correction_accuracy_used": self.correction_accuracy_used,
            "curve": [[a, m] for a, m in self.curve],
            "per_seed": self.per_seed,
            "fidelity_by_mode": self.fidelity_by_mode,
            "n_explanations": self.n_explanations,
        }


def run_experiment(splits: DatasetSplits, graph: KnowledgeGraph,
                   cfg: ExperimentConfig) -> ExperimentReport:
    """Corrupt, train, correct at the configured accuracy, retrain, and
    evaluate both models on the clean dataset; optionally sweep accuracies."""
    accuracies = sorted(set(cfg.sweep) | {cfg.accuracy})
    per_seed = []
    curve_rows: dict[float, list[float]] = {a: [] for a in accuracies}
    hats, bars = [], []
    fidelity_acc: dict[str, list[float]] = {mode: [] for mode in cfg.fidelity_modes}
    n_explanations = 0

    for seed in cfg.seeds:
        plan = make_corruption_plan(splits, cfg.rate, seed, n_entities=graph.n_entities)
        splits_hat = apply_corruption_plan(splits, plan)
        train_cfg = replace(cfg.train, seed=seed)
        model_hat = train(splits_hat, train_cfg,
                          n_entities=graph.n_entities, n_relations=graph.n_relations)
        mrr_hat = link_prediction(model_hat, splits).mrr

        if cfg.max_explanations > 0 and cfg.templates is not None:
            corrupted_believed = [item.corrupted for item in plan.items
                                  if classify(model_hat, item.corrupted)]
            graph_hat = KnowledgeGraph.from_triples(graph.entities, graph.relations,
                                                    splits_hat.positives("train"))
            exps = explain_misclassified(splits_hat, graph_hat, model_hat, cfg.templates,
                                         cfg.surrogate, cfg.max_explanations,
                                         extra_queries=corrupted_believed)
            n_explanations += len(exps)

        for mode in cfg.fidelity_modes:
            graph_hat = KnowledgeGraph.from_triples(graph.entities, graph.relations,
                                                    splits_hat.positives("train"))
            ev = evaluate_fidelity(mode, splits_hat, graph_hat, model_hat, cfg.surrogate)
            fidelity_acc[mode].append(ev.mean_f1)

        seed_row = {"seed": seed, "mrr_corrupted": mrr_hat, "mrr_by_accuracy": {}}
        for a in accuracies:
            corrector = SimulatedCorrector(accuracy=a, seed=seed)
            records = simulate_corrections(plan, model_hat, corrector)
            splits_bar = apply_corrections(splits_hat, plan, records, cfg.wrong_choice_mode)
            model_bar = train(splits_bar, train_cfg,
                              n_entities=graph.n_entities, n_relations=graph.n_relations)
            mrr_bar = link_prediction(model_bar, splits).mrr
            curve_rows[a].append(mrr_bar)
            seed_row["mrr_by_accuracy"][a] = mrr_bar
            if a == cfg.accuracy:
                bars.append(mrr_bar)
        hats.append(mrr_hat)
        per_seed.append(seed_row)

    mrr_corrupted = float(np.median(hats))
    mrr_corrected = float(np.median(bars))
    curve = [(a, float(np.median(curve_rows[a]))) for a in accuracies]
    return ExperimentReport(
        mrr_corrupted=mrr_corrupted,
        mrr_corrected=mrr_corrected,
        relative_improvement=(mrr_corrected - mrr_corrupted) / mrr_corrupted,
        correction_accuracy_used=cfg.accuracy,
        curve=curve,
        per_seed=per_seed,
        fidelity_by_mode={mode: float(np.mean(v)) for mode, v in fidelity_acc.items()},
        n_explanations=n_explanations,
    )
