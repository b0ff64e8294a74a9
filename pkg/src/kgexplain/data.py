"""Canonical storage and I/O for entities, relations, triples and dataset splits.

Triples are stored with dense integer ids. Ids are assigned in first-appearance
order while reading the train/valid/test files, so appending new data never
reindexes existing symbols.
"""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path


class DatasetError(ValueError):
    """Malformed file or unresolved symbol while loading a dataset."""


class Vocab:
    """Bijective name <-> dense index mapping, insertion-ordered."""

    def __init__(self, names=()):
        self._names: list[str] = []
        self._ids: dict[str, int] = {}
        for name in names:
            self.add(name)

    def add(self, name: str) -> int:
        if not name:
            raise DatasetError("empty symbol name")
        idx = self._ids.get(name)
        if idx is None:
            idx = len(self._names)
            self._names.append(name)
            self._ids[name] = idx
        return idx

    def id(self, name: str) -> int:
        return self._ids[name]

    def name(self, idx: int) -> str:
        return self._names[idx]

    def __contains__(self, name: str) -> bool:
        return name in self._ids

    def __len__(self) -> int:
        return len(self._names)

    def __iter__(self):
        return iter(self._names)

    def __eq__(self, other):
        return isinstance(other, Vocab) and self._names == other._names


@dataclass(frozen=True, order=True)
class Triple:
    head: int
    relation: int
    tail: int


@dataclass(frozen=True)
class LabeledTriple:
    triple: Triple
    label: bool = True


@dataclass
class KnowledgeGraph:
    """Deduplicated fact set with per-entity adjacency lists.

    Immutable by convention after construction; mutating operations return
    new graphs.
    """

    entities: Vocab
    relations: Vocab
    facts: set[Triple] = field(default_factory=set)
    outgoing: dict[int, list[Triple]] = field(default_factory=lambda: defaultdict(list))
    incoming: dict[int, list[Triple]] = field(default_factory=lambda: defaultdict(list))

    @classmethod
    def from_triples(cls, entities: Vocab, relations: Vocab, triples) -> "KnowledgeGraph":
        g = cls(entities=entities, relations=relations)
        for t in triples:
            g._add(t)
        return g

    def _add(self, t: Triple) -> None:
        if t in self.facts:
            return
        self.facts.add(t)
        self.outgoing[t.head].append(t)
        self.incoming[t.tail].append(t)

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    def triple(self, head: str, relation: str, tail: str) -> Triple:
        return Triple(self.entities.id(head), self.relations.id(relation), self.entities.id(tail))

    def describe(self, t: Triple) -> tuple[str, str, str]:
        return (self.entities.name(t.head), self.relations.name(t.relation), self.entities.name(t.tail))


@dataclass
class DatasetSplits:
    train: list[LabeledTriple]
    valid: list[LabeledTriple]
    test: list[LabeledTriple]

    def positives(self, split: str) -> list[Triple]:
        return [lt.triple for lt in getattr(self, split) if lt.label]

    def all_positive_triples(self) -> set[Triple]:
        out = set()
        for split in (self.train, self.valid, self.test):
            out.update(lt.triple for lt in split if lt.label)
        return out

    def __eq__(self, other):
        return (
            isinstance(other, DatasetSplits)
            and self.train == other.train
            and self.valid == other.valid
            and self.test == other.test
        )


SPLIT_NAMES = ("train", "valid", "test")


def _parse_tsv(path: Path, entities: Vocab, relations: Vocab, grow: bool) -> list[tuple]:
    rows = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) not in (3, 4):
                raise DatasetError(f"{path}:{lineno}: expected 3 or 4 tab-separated columns, got {len(cols)}")
            h, r, t = cols[0], cols[1], cols[2]
            if not (h and r and t):
                raise DatasetError(f"{path}:{lineno}: empty field")
            label = True
            if len(cols) == 4:
                if cols[3] not in ("0", "1"):
                    raise DatasetError(f"{path}:{lineno}: label must be 0 or 1, got {cols[3]!r}")
                label = cols[3] == "1"
            if grow:
                entities.add(h)
                relations.add(r)
                entities.add(t)
            else:
                for sym, vocab, kind in ((h, entities, "entity"), (r, relations, "relation"), (t, entities, "entity")):
                    if sym not in vocab:
                        raise DatasetError(
                            f"{path}:{lineno}: unknown {kind} {sym!r} in triple ({h}, {r}, {t}) "
                            "not present in train split"
                        )
            rows.append((h, r, t, label))
    return rows


def _dedup(rows, entities: Vocab, relations: Vocab) -> list[LabeledTriple]:
    seen = set()
    out = []
    for h, r, t, label in rows:
        lt = LabeledTriple(Triple(entities.id(h), relations.id(r), entities.id(t)), label)
        if lt in seen:
            continue
        seen.add(lt)
        out.append(lt)
    return out


def load_dataset(path, format: str = "tsv") -> tuple[DatasetSplits, KnowledgeGraph]:
    """Load train/valid/test splits and build the graph from train positives.

    ``tsv``: `path` is a directory holding train.tsv/valid.tsv/test.tsv, one
    `head<TAB>relation<TAB>tail[<TAB>label]` row per line (label in {0,1},
    absent means 1).  ``json``: `path` is a single file with fields
    {entities, relations, train, valid, test}.
    """
    path = Path(path)
    entities, relations = Vocab(), Vocab()
    if format == "tsv":
        raw = {}
        for i, split in enumerate(SPLIT_NAMES):
            raw[split] = _parse_tsv(path / f"{split}.tsv", entities, relations, grow=split == "train")
    elif format == "json":
        with open(path, encoding="utf-8") as f:
            doc = json.load(f)
        for key in ("entities", "relations", *SPLIT_NAMES):
            if key not in doc:
                raise DatasetError(f"{path}: missing field {key!r}")
        for name in doc["entities"]:
            entities.add(name)
        for name in doc["relations"]:
            relations.add(name)
        raw = {}
        for split in SPLIT_NAMES:
            rows = []
            for i, row in enumerate(doc[split]):
                if len(row) not in (3, 4):
                    raise DatasetError(f"{path}: {split}[{i}]: expected [h, r, t] or [h, r, t, label]")
                h, r, t = row[0], row[1], row[2]
                label = bool(row[3]) if len(row) == 4 else True
                for sym, vocab, kind in ((h, entities, "entity"), (r, relations, "relation"), (t, entities, "entity")):
                    if sym not in vocab:
                        raise DatasetError(f"{path}: {split}[{i}]: unknown {kind} {sym!r}")
                rows.append((h, r, t, label))
            raw[split] = rows
    else:
        raise DatasetError(f"unknown format {format!r}")

    splits = DatasetSplits(*(_dedup(raw[s], entities, relations) for s in SPLIT_NAMES))
    _check_splits(splits, entities, relations)
    graph = KnowledgeGraph.from_triples(entities, relations, splits.positives("train"))
    return splits, graph


def _check_splits(splits: DatasetSplits, entities: Vocab, relations: Vocab) -> None:
    train_pos = {lt.triple for lt in splits.train if lt.label}
    train_ents = {e for lt in splits.train for e in (lt.triple.head, lt.triple.tail)}
    train_rels = {lt.triple.relation for lt in splits.train}
    for split_name in ("valid", "test"):
        pos = {lt.triple for lt in getattr(splits, split_name) if lt.label}
        overlap = pos & train_pos
        if overlap:
            t = next(iter(overlap))
            raise DatasetError(
                f"positive triple ({entities.name(t.head)}, {relations.name(t.relation)}, "
                f"{entities.name(t.tail)}) appears in both train and {split_name}"
            )
        for lt in getattr(splits, split_name):
            t = lt.triple
            if t.head not in train_ents or t.tail not in train_ents or t.relation not in train_rels:
                raise DatasetError(
                    f"{split_name} triple ({entities.name(t.head)}, {relations.name(t.relation)}, "
                    f"{entities.name(t.tail)}) uses a symbol unseen in train"
                )
    pos_valid = {lt.triple for lt in splits.valid if lt.label}
    pos_test = {lt.triple for lt in splits.test if lt.label}
    if pos_valid & pos_test:
        t = next(iter(pos_valid & pos_test))
        raise DatasetError(
            f"positive triple ({entities.name(t.head)}, {relations.name(t.relation)}, "
            f"{entities.name(t.tail)}) appears in both valid and test"
        )


def save_dataset(splits: DatasetSplits, graph: KnowledgeGraph, path, format: str = "tsv") -> None:
    """Write splits in canonical form; load(save(load(x))) == load(x)."""
    path = Path(path)
    entities, relations = graph.entities, graph.relations

    def row(lt: LabeledTriple):
        h, r, t = graph.describe(lt.triple)
        return (h, r, t) if lt.label else (h, r, t, "0")

    if format == "tsv":
        path.mkdir(parents=True, exist_ok=True)
        for split in SPLIT_NAMES:
            with open(path / f"{split}.tsv", "w", encoding="utf-8", newline="\n") as f:
                for lt in getattr(splits, split):
                    f.write("\t".join(row(lt)) + "\n")
    elif format == "json":
        doc = {
            "entities": list(entities),
            "relations": list(relations),
        }
        for split in SPLIT_NAMES:
            doc[split] = [
                [*graph.describe(lt.triple), 1 if lt.label else 0] for lt in getattr(splits, split)
            ]
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            json.dump(doc, f, indent=1, sort_keys=True)
            f.write("\n")
    else:
        raise DatasetError(f"unknown format {format!r}")


def corrupt_triple(t: Triple, position: str, replacement: int) -> Triple:
    """Substitute one entity of `t`; the original triple is unchanged."""
    if position not in ("head", "tail"):
        raise ValueError(f"position must be 'head' or 'tail', got {position!r}")
    current = t.head if position == "head" else t.tail
    if replacement == current:
        raise ValueError(f"replacement entity {replacement} equals the current {position}")
    if position == "head":
        return Triple(replacement, t.relation, t.tail)
    return Triple(t.head, t.relation, replacement)
