"""Interpretable surrogates that mimic the embedding's fact classifications.

The main surrogate is a per-query decision tree over one-hot relation-path
features, trained on a neighborhood of same-relation facts picked to maximize
held-out agreement with the embedding.  Global-tree and global-logistic
variants exist as ablation baselines.  All labels come from the embedding's
own classifications, never from dataset ground truth: the surrogate has to
copy the teacher, mistakes included.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .data import DatasetSplits, KnowledgeGraph, Triple
from .embedding import (
    EmbeddingModel,
    classify_batch,
    nearest_neighbors,
    sample_corruptions,
)
from .paths import AugmentedGraph, PathFeatureMatrix, build_augmented_graph, build_feature_matrix


@dataclass
class SurrogateConfig:
    max_depth: int = 6
    min_leaf: int = 2
    k_grid: tuple = (16, 32, 64, 0)  # 0 means the whole pool
    cv_folds: int = 3
    head_only_similarity: bool = False
    pool_corruptions: int = 1
    pool_cap: int | None = None  # per-relation cap on pool facts before corruption
    neighbor_candidates: int = 5
    max_path_length: int = 3
    k_substitution: int = 2
    substitution_mode: str = "both"
    folds: int = 5
    neg_ratio_eval: int = 1
    eval_sample: int | None = None
    linear_lr: float = 1.0
    linear_epochs: int = 300
    seed: int = 0


@dataclass
class TreeNode:
    feature: int = -1  # -1 marks a leaf
    left: "TreeNode | None" = None  # feature absent
    right: "TreeNode | None" = None  # feature present
    klass: bool = False
    n_samples: int = 0

    @property
    def is_leaf(self) -> bool:
        return self.feature < 0


@dataclass
class LocalTreeModel:
    query: Triple | None
    root: TreeNode
    vocabulary: list
    neighborhood_k: int
    fidelity_on_train: float
    max_depth: int
    min_leaf: int

    def depth(self) -> int:
        def walk(node):
            if node.is_leaf:
                return 0
            return 1 + max(walk(node.left), walk(node.right))

        return walk(self.root)


@dataclass
class TrainingNeighborhood:
    query: Triple
    examples: list[Triple]
    labels: np.ndarray
    rows: np.ndarray
    similarities: np.ndarray
    k: int
    single_class: bool = False


def gini(labels: np.ndarray) -> float:
    n = len(labels)
    if n == 0:
        return 0.0
    p = float(np.count_nonzero(labels)) / n
    return 2.0 * p * (1.0 - p)


def _majority(labels: np.ndarray) -> bool:
    pos = int(np.count_nonzero(labels))
    return pos > len(labels) - pos  # tie goes negative


def _best_split(rows: np.ndarray, labels: np.ndarray, min_leaf: int) -> int | None:
    """Feature index minimizing weighted Gini impurity; ties to the lowest
    index; None when no feature leaves min_leaf samples on both sides."""
    n = len(labels)
    present = rows.astype(bool)
    n_right = present.sum(axis=0)
    n_left = n - n_right
    pos_right = (present & labels[:, None]).sum(axis=0)
    pos_left = int(np.count_nonzero(labels)) - pos_right

    valid = (n_left >= min_leaf) & (n_right >= min_leaf)
    if not valid.any():
        return None
    with np.errstate(divide="ignore", invalid="ignore"):
        pl = np.where(n_left > 0, pos_left / n_left, 0.0)
        pr = np.where(n_right > 0, pos_right / n_right, 0.0)
        impurity = (n_left * 2 * pl * (1 - pl) + n_right * 2 * pr * (1 - pr)) / n
    impurity = np.where(valid, impurity, np.inf)
    return int(np.argmin(impurity))  # argmin takes first minimum: lowest index wins


def _grow(rows, labels, depth, max_depth, min_leaf) -> TreeNode:
    node = TreeNode(klass=_majority(labels), n_samples=len(labels))
    if depth >= max_depth or gini(labels) == 0.0:
        return node
    feature = _best_split(rows, labels, min_leaf)
    if feature is None:
        return node
    mask = rows[:, feature].astype(bool)
    node.feature = feature
    node.left = _grow(rows[~mask], labels[~mask], depth + 1, max_depth, min_leaf)
    node.right = _grow(rows[mask], labels[mask], depth + 1, max_depth, min_leaf)
    return node


def fit_tree(nbhd: TrainingNeighborhood, features: PathFeatureMatrix,
             max_depth: int = 6, min_leaf: int = 2) -> LocalTreeModel:
    if len(nbhd.examples) == 0:
        raise ValueError("empty neighborhood")
    root = _grow(nbhd.rows, nbhd.labels, 0, max_depth, min_leaf)
    model = LocalTreeModel(
        query=nbhd.query, root=root, vocabulary=features.vocabulary,
        neighborhood_k=nbhd.k, fidelity_on_train=0.0,
        max_depth=max_depth, min_leaf=min_leaf,
    )
    preds = predict_rows(model, nbhd.rows)
    model.fidelity_on_train = float(np.mean(preds == nbhd.labels))
    return model


def classify_surrogate(model: LocalTreeModel, row: np.ndarray) -> tuple[bool, list[tuple[int, bool]]]:
    """Predicted class plus the ordered decision path (feature, branch-taken)."""
    if len(row) != len(model.vocabulary):
        raise ValueError("feature row does not match the model vocabulary")
    node = model.root
    path = []
    while not node.is_leaf:
        taken = bool(row[node.feature])
        path.append((node.feature, taken))
        node = node.right if taken else node.left
    return node.klass, path


def predict_rows(model: LocalTreeModel, rows: np.ndarray) -> np.ndarray:
    return np.array([classify_surrogate(model, row)[0] for row in rows], dtype=bool)


@dataclass
class LinearSurrogate:
    weights: np.ndarray
    bias: float

    def scores(self, rows: np.ndarray) -> np.ndarray:
        return rows @ self.weights + self.bias

    def predict(self, rows: np.ndarray) -> np.ndarray:
        return self.scores(rows) >= 0.0


def fit_linear_baseline(labels: np.ndarray, rows: np.ndarray, lr: float = 1.0,
                        epochs: int = 300) -> LinearSurrogate:
    """Full-batch logistic regression; deterministic (zero init, fixed steps)."""
    if len(labels) == 0:
        raise ValueError("empty training set")
    n, d = rows.shape
    w = np.zeros(d)
    b = 0.0
    x = rows.astype(float)
    y = labels.astype(float)
    for _ in range(epochs):
        p = 1.0 / (1.0 + np.exp(-(x @ w + b)))
        g = (p - y) / n
        w -= lr * (x.T @ g)
        b -= lr * float(g.sum())
    return LinearSurrogate(w, b)


def build_pool(relation: int, graph: KnowledgeGraph, m: EmbeddingModel,
               rng: np.random.Generator, corruptions_per_fact: int = 1,
               neighbor_candidates: int = 5, exclude: set[Triple] | None = None,
               cap: int | None = None) -> list[Triple]:
    """Candidate facts sharing `relation`: the graph's own facts plus
    nearest-neighbor corruptions of them (so both embedding classes appear)."""
    exclude = exclude or set()
    facts = sorted(t for t in graph.facts if t.relation == relation)
    if cap is not None and len(facts) > cap:
        idx = rng.choice(len(facts), size=cap, replace=False)
        facts = [facts[i] for i in sorted(int(x) for x in idx)]
    pool = [t for t in facts if t not in exclude]
    seen = set(pool) | set(facts) | exclude
    nn_cache: dict[int, list[int]] = {}

    def neighbors(e):
        if e not in nn_cache:
            nn_cache[e] = nearest_neighbors(m, e, min(neighbor_candidates, m.n_entities - 1))
        return nn_cache[e]

    for t in facts:
        for _ in range(corruptions_per_fact):
            for _attempt in range(10):
                corrupt_head = bool(rng.integers(2))
                slot_entity = t.head if corrupt_head else t.tail
                options = neighbors(slot_entity)
                repl = options[int(rng.integers(len(options)))]
                cand = Triple(repl, t.relation, t.tail) if corrupt_head else Triple(t.head, t.relation, repl)
                if cand not in seen:
                    seen.add(cand)
                    pool.append(cand)
                    break
    return pool


def _cosine_similarities(m: EmbeddingModel, q: Triple, examples: list[Triple],
                         head_only: bool) -> np.ndarray:
    vecs = m.entity_vectors
    norms = np.linalg.norm(vecs, axis=1)

    def sims(anchor: int, others: np.ndarray) -> np.ndarray:
        out = np.full(len(others), -1.0)
        if norms[anchor] == 0:
            return out
        ok = norms[others] > 0
        out[ok] = vecs[others[ok]] @ vecs[anchor] / (norms[others[ok]] * norms[anchor])
        return out

    heads = np.array([t.head for t in examples])
    total = sims(q.head, heads)
    if not head_only:
        tails = np.array([t.tail for t in examples])
        total = total + sims(q.tail, tails)
    return total


def select_neighborhood(q: Triple, m: EmbeddingModel, pool: list[Triple], k_grid,
                        graph_aug: AugmentedGraph, features: PathFeatureMatrix | None = None,
                        cfg: SurrogateConfig | None = None) -> TrainingNeighborhood:
    """Rank the pool by embedding-space similarity to the query and pick the
    neighborhood size whose tree best agrees with the embedding under
    internal cross-validation (ties to the smaller size)."""
    cfg = cfg or SurrogateConfig()
    deduped: list[Triple] = []
    seen = set()
    for t in pool:
        if t != q and t not in seen:
            seen.add(t)
            deduped.append(t)
    if not deduped:
        raise ValueError("pool contains no usable examples")

    if features is None:
        pairs = [(t.head, t.tail) for t in deduped] + [(q.head, q.tail)]
        features = build_feature_matrix(graph_aug, pairs, q.relation, cfg.max_path_length)

    labels = classify_batch(m, deduped)
    sims = _cosine_similarities(m, q, deduped, cfg.head_only_similarity)
    order = np.argsort(-sims, kind="stable")
    ranked = [deduped[i] for i in order]
    ranked_labels = labels[order]
    ranked_sims = sims[order]
    ranked_rows = np.stack([features.row_for(t.head, t.tail) for t in ranked])

    single_class = bool(ranked_labels.all() or not ranked_labels.any())
    if single_class:
        warnings.warn("neighborhood pool is single-class under the embedding; "
                      "the surrogate will be a single leaf")

    sizes = sorted({len(ranked) if k in (0, None) else min(int(k), len(ranked)) for k in k_grid})
    best_k, best_score = sizes[0], -1.0
    for k in sizes:
        rows_k, labels_k = ranked_rows[:k], ranked_labels[:k]
        n_folds = min(cfg.cv_folds, k)
        if n_folds < 2:
            score = 0.0
        else:
            hits, total = 0, 0
            fold_of = np.arange(k) % n_folds
            for f in range(n_folds):
                tr, te = fold_of != f, fold_of == f
                if not tr.any() or not te.any():
                    continue
                nb = TrainingNeighborhood(q, [ranked[i] for i in np.flatnonzero(tr)],
                                          labels_k[tr], rows_k[tr], ranked_sims[:k][tr], k)
                tree = fit_tree(nb, features, cfg.max_depth, cfg.min_leaf)
                hits += int(np.sum(predict_rows(tree, rows_k[te]) == labels_k[te]))
                total += int(te.sum())
            score = hits / total if total else 0.0
        if score > best_score:
            best_k, best_score = k, score

    return TrainingNeighborhood(
        query=q, examples=ranked[:best_k], labels=ranked_labels[:best_k],
        rows=ranked_rows[:best_k], similarities=ranked_sims[:best_k],
        k=best_k, single_class=single_class,
    )


@dataclass
class FidelityReport:
    mode: str
    f1: float
    precision: float
    recall: float
    accuracy: float
    n: int

    def to_dict(self) -> dict:
        return {"mode": self.mode, "f1": self.f1, "precision": self.precision,
                "recall": self.recall, "accuracy": self.accuracy, "n": self.n}


@dataclass
class FidelityEvaluation:
    mode: str
    folds: list[FidelityReport]
    mean_f1: float
    std_f1: float

    def to_dict(self) -> dict:
        return {"mode": self.mode, "folds": [f.to_dict() for f in self.folds],
                "mean_f1": self.mean_f1, "std_f1": self.std_f1}


def fidelity_report(mode: str, predictions: np.ndarray, labels: np.ndarray) -> FidelityReport:
    predictions = np.asarray(predictions, dtype=bool)
    labels = np.asarray(labels, dtype=bool)
    tp = int(np.sum(predictions & labels))
    fp = int(np.sum(predictions & ~labels))
    fn = int(np.sum(~predictions & labels))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    accuracy = float(np.mean(predictions == labels)) if len(labels) else 0.0
    return FidelityReport(mode, f1, precision, recall, accuracy, len(labels))


MODES = ("local_dt", "global_dt", "global_lr")


def evaluate_fidelity(mode: str, splits: DatasetSplits, graph: KnowledgeGraph,
                      m: EmbeddingModel, cfg: SurrogateConfig | None = None,
                      graph_aug: AugmentedGraph | None = None,
                      path_caches: dict[int, dict] | None = None) -> FidelityEvaluation:
    """F1 agreement between surrogate and embedding classifications on test
    positives plus per-fold resampled corruption negatives.

    `path_caches` (relation -> pair -> path set) may be shared across calls
    against the same model and graph to amortize path extraction.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    cfg = cfg or SurrogateConfig()
    test_pos = splits.positives("test")
    if not test_pos:
        raise ValueError("empty test split")
    if graph_aug is None:
        graph_aug = build_augmented_graph(graph, m, cfg.k_substitution, cfg.substitution_mode)
    known = splits.all_positive_triples()

    ss = np.random.SeedSequence(cfg.seed)
    fold_seeds = ss.spawn(cfg.folds)
    pool_rng = np.random.default_rng(ss.spawn(1)[0])

    relations = sorted({t.relation for t in test_pos})
    pools = {r: build_pool(r, graph, m, pool_rng, cfg.pool_corruptions,
                           cfg.neighbor_candidates, cap=cfg.pool_cap)
             for r in relations}
    path_cache = path_caches if path_caches is not None else {}
    for r in relations:
        path_cache.setdefault(r, {})

    reports = []
    for fold, seed in enumerate(fold_seeds):
        rng = np.random.default_rng(seed)
        positives = list(test_pos)
        if cfg.eval_sample is not None and len(positives) > cfg.eval_sample:
            idx = rng.choice(len(positives), size=cfg.eval_sample, replace=False)
            positives = [positives[i] for i in sorted(idx)]
        negatives = sample_corruptions(positives, m.n_entities, known, rng,
                                       per_positive=cfg.neg_ratio_eval)
        eval_triples = positives + negatives
        labels = classify_batch(m, eval_triples)

        predictions = np.zeros(len(eval_triples), dtype=bool)
        by_rel: dict[int, list[int]] = {}
        for i, t in enumerate(eval_triples):
            by_rel.setdefault(t.relation, []).append(i)

        for r, indices in by_rel.items():
            eval_here = [eval_triples[i] for i in indices]
            pool = [t for t in pools.get(r, []) if t not in set(eval_here)]
            if not pool:
                continue  # no training signal: keep default negative predictions
            pairs = [(t.head, t.tail) for t in pool] + [(t.head, t.tail) for t in eval_here]
            features = build_feature_matrix(graph_aug, pairs, r, cfg.max_path_length,
                                            path_cache=path_cache[r])
            pool_labels = classify_batch(m, pool)
            pool_rows = np.stack([features.row_for(t.head, t.tail) for t in pool])
            eval_rows = np.stack([features.row_for(t.head, t.tail) for t in eval_here])

            if mode == "local_dt":
                for j, q in zip(indices, eval_here):
                    with warnings.catch_warnings():
                        warnings.simplefilter("ignore")
                        nbhd = select_neighborhood(q, m, pool, cfg.k_grid, graph_aug,
                                                   features=features, cfg=cfg)
                    tree = fit_tree(nbhd, features, cfg.max_depth, cfg.min_leaf)
                    predictions[j], _ = classify_surrogate(tree, features.row_for(q.head, q.tail))
            elif mode == "global_dt":
                nbhd = TrainingNeighborhood(eval_here[0], pool, pool_labels, pool_rows,
                                            np.zeros(len(pool)), len(pool))
                tree = fit_tree(nbhd, features, cfg.max_depth, cfg.min_leaf)
                preds = predict_rows(tree, eval_rows)
                for j, p in zip(indices, preds):
                    predictions[j] = p
            else:
                lin = fit_linear_baseline(pool_labels, pool_rows, cfg.linear_lr, cfg.linear_epochs)
                preds = lin.predict(eval_rows)
                for j, p in zip(indices, preds):
                    predictions[j] = p

        reports.append(fidelity_report(mode, predictions, labels))

    f1s = np.array([r.f1 for r in reports])
    return FidelityEvaluation(mode, reports, float(f1s.mean()), float(f1s.std()))
