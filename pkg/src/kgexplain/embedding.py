"""Tensor-factorization knowledge graph embedding.

Entities are vectors, relations are vectors mixed through a shared core
tensor; the raw score of (h, r, t) is the trilinear contraction
v_h . (w_r x core) . v_t and plausibility is its logistic.  Training is
plain seeded SGD on binary cross-entropy with sampled negatives, so two
runs with the same seed produce bit-identical parameters.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .data import DatasetSplits, LabeledTriple, Triple


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    d_e: int = 64
    d_r: int = 64
    learning_rate: float = 0.05
    epochs: int = 500
    batch_size: int = 512
    negative_ratio: int = 4
    label_smoothing: float = 0.1
    seed: int = 0
    optimizer: str = "sgd"  # "adam" escapes the small-init plateau at scale
    # fresh negatives each epoch; turn off for a stationary smoke-run objective
    resample_negatives: bool = True

    def __post_init__(self):
        if self.d_e < 1 or self.d_r < 1:
            raise ValueError("embedding dims must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.epochs <= 0 or self.batch_size <= 0:
            raise ValueError("epochs and batch_size must be > 0")
        if self.negative_ratio < 1:
            raise ValueError("negative_ratio must be >= 1")
        if not 0 <= self.label_smoothing < 1:
            raise ValueError("label_smoothing must be in [0, 1)")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError("optimizer must be 'sgd' or 'adam'")

    def hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class ScoredTriple:
    triple: Triple
    raw_score: float
    plausibility: float


@dataclass
class EmbeddingModel:
    entity_vectors: np.ndarray  # (|E|, d_e)
    relation_vectors: np.ndarray  # (|R|, d_r)
    core_tensor: np.ndarray  # (d_r, d_e, d_e)
    thresholds: np.ndarray  # per-relation raw-score cutoff
    rng_seed: int
    config: TrainConfig | None = None
    loss_curve: list[float] = field(default_factory=list)

    @property
    def n_entities(self) -> int:
        return self.entity_vectors.shape[0]

    @property
    def n_relations(self) -> int:
        return self.relation_vectors.shape[0]

    def relation_matrix(self, r: int) -> np.ndarray:
        """Core tensor contracted with relation r: a (d_e, d_e) bilinear form."""
        d_e = self.entity_vectors.shape[1]
        return (self.relation_vectors[r] @ self.core_tensor.reshape(self.core_tensor.shape[0], -1)).reshape(d_e, d_e)

    def relation_matrices(self) -> np.ndarray:
        d_e = self.entity_vectors.shape[1]
        flat = self.relation_vectors @ self.core_tensor.reshape(self.core_tensor.shape[0], -1)
        return flat.reshape(self.n_relations, d_e, d_e)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _check_ids(m: EmbeddingModel, h, r, t) -> None:
    if np.any(h < 0) or np.any(np.asarray(h) >= m.n_entities) or np.any(t < 0) or np.any(np.asarray(t) >= m.n_entities):
        raise IndexError("entity id out of range")
    if np.any(r < 0) or np.any(np.asarray(r) >= m.n_relations):
        raise IndexError("relation id out of range")


def raw_scores(m: EmbeddingModel, h: np.ndarray, r: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Batched trilinear scores for parallel id arrays."""
    h = np.asarray(h, dtype=np.int64)
    r = np.asarray(r, dtype=np.int64)
    t = np.asarray(t, dtype=np.int64)
    _check_ids(m, h, r, t)
    vh = m.entity_vectors[h]
    vt = m.entity_vectors[t]
    core_flat = m.core_tensor.reshape(m.core_tensor.shape[0], -1)
    mats = (m.relation_vectors[r] @ core_flat).reshape(len(h), vh.shape[1], vh.shape[1])
    return np.einsum("bi,bik,bk->b", vh, mats, vt)


def score(m: EmbeddingModel, t: Triple) -> ScoredTriple:
    s = float(raw_scores(m, np.array([t.head]), np.array([t.relation]), np.array([t.tail]))[0])
    return ScoredTriple(t, s, float(sigmoid(s)))


def classify(m: EmbeddingModel, t: Triple) -> bool:
    return bool(score(m, t).raw_score >= m.thresholds[t.relation])


def classify_batch(m: EmbeddingModel, triples) -> np.ndarray:
    if len(triples) == 0:
        return np.zeros(0, dtype=bool)
    arr = np.array([(t.head, t.relation, t.tail) for t in triples], dtype=np.int64)
    s = raw_scores(m, arr[:, 0], arr[:, 1], arr[:, 2])
    return s >= m.thresholds[arr[:, 1]]


def plausibilities(m: EmbeddingModel, triples) -> np.ndarray:
    if len(triples) == 0:
        return np.zeros(0)
    arr = np.array([(t.head, t.relation, t.tail) for t in triples], dtype=np.int64)
    return sigmoid(raw_scores(m, arr[:, 0], arr[:, 1], arr[:, 2]))


def loss_and_grads(entity_vectors, relation_vectors, core_tensor, h, r, t, y,
                   label_smoothing: float = 0.0):
    """Mean binary cross-entropy on logistic scores plus analytic gradients.

    Returns (loss, grad_entity, grad_relation, grad_core); gradients have the
    same shapes as the parameter arrays.
    """
    n = len(h)
    d_e = entity_vectors.shape[1]
    y_smooth = y * (1.0 - label_smoothing) + 0.5 * label_smoothing

    vh = entity_vectors[h]
    vt = entity_vectors[t]
    wr = relation_vectors[r]
    core_flat = core_tensor.reshape(core_tensor.shape[0], -1)
    mats = (wr @ core_flat).reshape(n, d_e, d_e)

    u = np.einsum("bik,bk->bi", mats, vt)  # M_b v_t
    s = np.einsum("bi,bi->b", vh, u)
    # softplus(s) - y*s is BCE(-log sigmoid) in a numerically stable form
    loss = float(np.mean(np.logaddexp(0.0, s) - y_smooth * s))

    g = (sigmoid(s) - y_smooth) / n
    grad_vh = g[:, None] * u
    grad_vt = g[:, None] * np.einsum("bi,bik->bk", vh, mats)
    grad_mats = (g[:, None] * vh).reshape(n, d_e, 1) * vt.reshape(n, 1, d_e)
    grad_mats_flat = grad_mats.reshape(n, d_e * d_e)
    grad_core = (wr.T @ grad_mats_flat).reshape(core_tensor.shape)
    grad_wr = grad_mats_flat @ core_flat.T

    grad_entity = np.zeros_like(entity_vectors)
    np.add.at(grad_entity, h, grad_vh)
    np.add.at(grad_entity, t, grad_vt)
    grad_relation = np.zeros_like(relation_vectors)
    np.add.at(grad_relation, r, grad_wr)
    return loss, grad_entity, grad_relation, grad_core


def sample_corruptions(triples, n_entities: int, known_positives: set, rng: np.random.Generator,
                       per_positive: int = 1) -> list[Triple]:
    """Corrupt head or tail (fair coin) with a uniform distinct entity,
    rejecting candidates that collide with known positives."""
    out = []
    for t in triples:
        for _ in range(per_positive):
            for _attempt in range(100):
                corrupt_head = bool(rng.integers(2))
                repl = int(rng.integers(n_entities))
                if corrupt_head:
                    if repl == t.head:
                        continue
                    cand = Triple(repl, t.relation, t.tail)
                else:
                    if repl == t.tail:
                        continue
                    cand = Triple(t.head, t.relation, repl)
                if cand not in known_positives:
                    out.append(cand)
                    break
            else:
                raise TrainingError("could not sample a negative; graph too dense")
    return out


def train(splits: DatasetSplits, cfg: TrainConfig, n_entities: int | None = None,
          n_relations: int | None = None) -> EmbeddingModel:
    """Seeded SGD training; returns a model with calibrated thresholds."""
    positives = splits.positives("train")
    if not positives:
        raise TrainingError("empty train split")
    all_ids = [lt.triple for s in ("train", "valid", "test") for lt in getattr(splits, s)]
    if n_entities is None:
        n_entities = max(max(t.head, t.tail) for t in all_ids) + 1
    if n_relations is None:
        n_relations = max(t.relation for t in all_ids) + 1

    ss = np.random.SeedSequence(cfg.seed)
    init_rng, neg_rng, calib_rng = (np.random.default_rng(s) for s in ss.spawn(3))

    entity_vectors = init_rng.uniform(-0.1, 0.1, size=(n_entities, cfg.d_e))
    relation_vectors = init_rng.uniform(-0.1, 0.1, size=(n_relations, cfg.d_r))
    core_tensor = init_rng.uniform(-0.1, 0.1, size=(cfg.d_r, cfg.d_e, cfg.d_e))

    pos_arr = np.array([(t.head, t.relation, t.tail) for t in positives], dtype=np.int64)
    known = set(positives)
    loss_curve = []

    params = (entity_vectors, relation_vectors, core_tensor)
    adam_m = [np.zeros_like(p) for p in params]
    adam_v = [np.zeros_like(p) for p in params]
    adam_step = 0
    beta1, beta2, eps = 0.9, 0.999, 1e-8

    fixed_neg_arr = None
    for epoch in range(cfg.epochs):
        if fixed_neg_arr is None or cfg.resample_negatives:
            negatives = sample_corruptions(positives, n_entities, known, neg_rng,
                                           per_positive=cfg.negative_ratio)
            fixed_neg_arr = np.array([(t.head, t.relation, t.tail) for t in negatives], dtype=np.int64)
        neg_arr = fixed_neg_arr
        examples = np.vstack([pos_arr, neg_arr])
        labels = np.concatenate([np.ones(len(pos_arr)), np.zeros(len(neg_arr))])
        order = neg_rng.permutation(len(examples))
        examples, labels = examples[order], labels[order]

        epoch_losses = []
        for start in range(0, len(examples), cfg.batch_size):
            batch = examples[start : start + cfg.batch_size]
            yb = labels[start : start + cfg.batch_size]
            loss, *grads = loss_and_grads(
                entity_vectors, relation_vectors, core_tensor,
                batch[:, 0], batch[:, 1], batch[:, 2], yb, cfg.label_smoothing,
            )
            if cfg.optimizer == "adam":
                adam_step += 1
                correction = np.sqrt(1 - beta2 ** adam_step) / (1 - beta1 ** adam_step)
                for p, g, mm, vv in zip(params, grads, adam_m, adam_v):
                    mm *= beta1
                    mm += (1 - beta1) * g
                    vv *= beta2
                    vv += (1 - beta2) * g * g
                    p -= cfg.learning_rate * correction * mm / (np.sqrt(vv) + eps)
            else:
                for p, g in zip(params, grads):
                    p -= cfg.learning_rate * g
            epoch_losses.append(loss)
        loss_curve.append(float(np.mean(epoch_losses)))
        if not (np.isfinite(entity_vectors).all() and np.isfinite(relation_vectors).all()
                and np.isfinite(core_tensor).all()):
            raise TrainingError(f"non-finite parameters after epoch {epoch}")

    model = EmbeddingModel(entity_vectors, relation_vectors, core_tensor,
                           thresholds=np.zeros(n_relations), rng_seed=cfg.seed, config=cfg,
                           loss_curve=loss_curve)

    calibration = [lt for lt in splits.valid]
    valid_pos = splits.positives("valid")
    if valid_pos:
        negs = sample_corruptions(valid_pos, n_entities, splits.all_positive_triples(), calib_rng)
        calibration.extend(LabeledTriple(t, False) for t in negs)
    if calibration:
        model.thresholds = calibrate_thresholds(model, calibration)
    return model


def _best_threshold(scores: np.ndarray, labels: np.ndarray) -> tuple[float, float]:
    """Scan all decision boundaries; return (threshold, accuracy).

    Candidates are midpoints between adjacent distinct scores plus one
    candidate below and above everything, so ties resolve to midpoints.
    """
    distinct = np.unique(scores)
    candidates = [distinct[0] - 1.0]
    candidates.extend((distinct[:-1] + distinct[1:]) / 2.0)
    candidates.append(distinct[-1] + 1.0)
    best_tau, best_acc = candidates[0], -1.0
    n = len(scores)
    for tau in candidates:
        acc = float(np.sum((scores >= tau) == labels)) / n
        if acc > best_acc:
            best_tau, best_acc = float(tau), acc
    return best_tau, best_acc


def calibrate_thresholds(m: EmbeddingModel, calibration: list[LabeledTriple]) -> np.ndarray:
    """Per-relation raw-score cutoffs maximizing calibration accuracy."""
    arr = np.array([(lt.triple.head, lt.triple.relation, lt.triple.tail) for lt in calibration],
                   dtype=np.int64)
    labels = np.array([lt.label for lt in calibration], dtype=bool)
    scores = raw_scores(m, arr[:, 0], arr[:, 1], arr[:, 2])
    global_tau, _ = _best_threshold(scores, labels)

    thresholds = np.full(m.n_relations, global_tau)
    for r in range(m.n_relations):
        mask = arr[:, 1] == r
        if not mask.any():
            continue
        r_labels = labels[mask]
        if r_labels.all() or not r_labels.any():
            warnings.warn(f"relation {r}: single-class calibration set, using global threshold")
            continue
        thresholds[r], _ = _best_threshold(scores[mask], r_labels)
    return thresholds


def nearest_neighbors(m: EmbeddingModel, e: int, k: int) -> list[int]:
    """Top-k entities by cosine similarity to e, excluding e; ties by index."""
    if k >= m.n_entities:
        raise ValueError("k must be < number of entities")
    vecs = m.entity_vectors
    norms = np.linalg.norm(vecs, axis=1)
    target = vecs[e]
    target_norm = norms[e]
    sims = np.full(m.n_entities, -1.0)
    ok = norms > 0
    if target_norm > 0:
        sims[ok] = vecs[ok] @ target / (norms[ok] * target_norm)
    sims[e] = -np.inf
    # stable sort on -sims keeps index order for ties
    order = np.argsort(-sims, kind="stable")
    return [int(i) for i in order[:k]]


@dataclass
class LinkPredictionReport:
    mrr: float
    hits_at: dict[int, float]
    per_relation_mrr: dict[int, float]
    n_queries: int
    filtered: bool = True

    def to_dict(self) -> dict:
        return {
            "mrr": self.mrr,
            "hits_at": {str(k): v for k, v in self.hits_at.items()},
            "per_relation_mrr": {str(k): v for k, v in self.per_relation_mrr.items()},
            "n_queries": self.n_queries,
            "filtered": self.filtered,
        }


def link_prediction(m: EmbeddingModel, splits: DatasetSplits, filtered: bool = True,
                    hits_cutoffs=(1, 3, 10)) -> LinkPredictionReport:
    """Rank each test triple against all head and tail corruptions.

    In the filtered setting, corrupted candidates that are known positives
    anywhere in the dataset are removed before ranking.  Ties are ranked
    pessimistically (the true triple goes after equal-scored candidates).
    """
    test_pos = splits.positives("test")
    if not test_pos:
        raise ValueError("empty test split")
    known = splits.all_positive_triples()
    mats = m.relation_matrices()
    ranks = []
    rel_of_rank = []
    for t in test_pos:
        mat = mats[t.relation]
        tail_scores = m.entity_vectors @ (m.entity_vectors[t.head] @ mat)
        head_scores = m.entity_vectors @ (mat @ m.entity_vectors[t.tail])
        for scores, true_idx, candidate in (
            (tail_scores, t.tail, lambda e: Triple(t.head, t.relation, e)),
            (head_scores, t.head, lambda e: Triple(e, t.relation, t.tail)),
        ):
            keep = np.ones(m.n_entities, dtype=bool)
            if filtered:
                for e in range(m.n_entities):
                    if e != true_idx and candidate(e) in known:
                        keep[e] = False
            s_true = scores[true_idx]
            cand = scores[keep]
            rank = 1 + int(np.sum(cand > s_true)) + (int(np.sum(cand == s_true)) - 1)
            ranks.append(rank)
            rel_of_rank.append(t.relation)

    ranks = np.array(ranks, dtype=float)
    rel_of_rank = np.array(rel_of_rank)
    rr = 1.0 / ranks
    per_relation = {int(r): float(rr[rel_of_rank == r].mean()) for r in np.unique(rel_of_rank)}
    hits = {c: float(np.mean(ranks <= c)) for c in hits_cutoffs}
    return LinkPredictionReport(float(rr.mean()), hits, per_relation, len(ranks), filtered)


MODEL_FORMAT_VERSION = 1


def save_model(m: EmbeddingModel, path) -> None:
    meta = {
        "version": MODEL_FORMAT_VERSION,
        "seed": m.rng_seed,
        "config": asdict(m.config) if m.config else None,
        "config_hash": m.config.hash() if m.config else None,
    }
    np.savez(
        path,
        entity_vectors=m.entity_vectors,
        relation_vectors=m.relation_vectors,
        core_tensor=m.core_tensor,
        thresholds=m.thresholds,
        loss_curve=np.array(m.loss_curve),
        meta=np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8),
    )


def load_model(path) -> EmbeddingModel:
    with np.load(path) as z:
        meta = json.loads(bytes(z["meta"]).decode())
        if meta["version"] != MODEL_FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta['version']}")
        cfg = TrainConfig(**meta["config"]) if meta["config"] else None
        return EmbeddingModel(
            entity_vectors=z["entity_vectors"],
            relation_vectors=z["relation_vectors"],
            core_tensor=z["core_tensor"],
            thresholds=z["thresholds"],
            rng_seed=meta["seed"],
            config=cfg,
            loss_curve=[float(x) for x in z["loss_curve"]],
        )
