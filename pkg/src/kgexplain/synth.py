"""Synthetic household knowledge graph generator.

Builds a compositional world: locations sit in rooms, objects sit in/on
locations (and therefore in rooms), actions cause states, objects afford
actions (and therefore can reach states), tools serve actions (and therefore
operate on the objects affording them).  The derivations make relation paths
genuinely predictive, which is what the surrogate pipeline needs to have
something real to learn.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import DatasetSplits, KnowledgeGraph, LabeledTriple, Triple, Vocab

RELATIONS = (
    "HasEffect", "InverseActionOf", "InverseStateOf", "LocInRoom", "ObjCanBe",
    "ObjInLoc", "ObjInRoom", "ObjOnLoc", "ObjUsedTo", "ObjHasState", "OperatesOn",
)

ROOM_NAMES = ("kitchen", "bedroom", "bathroom", "livingroom")


@dataclass
class HouseholdSpec:
    n_rooms: int = 4
    n_locations: int = 43
    n_objects: int = 189
    n_actions: int = 35
    n_states: int = 20
    n_tools: int = 52
    locations_per_object: tuple = (1, 3)
    actions_per_object: tuple = (3, 10)
    operates_on_keep: float = 0.8
    extra_state_facts: int = 2
    noise_rate: float = 0.02
    valid_fraction: float = 0.1
    test_fraction: float = 0.1
    seed: int = 0


def mini_spec(seed: int = 0) -> HouseholdSpec:
    return HouseholdSpec(
        n_rooms=3, n_locations=8, n_objects=26, n_actions=9, n_states=6, n_tools=8,
        locations_per_object=(1, 2), actions_per_object=(1, 4),
        operates_on_keep=0.5, extra_state_facts=1, noise_rate=0.02, seed=seed,
    )


def generate_household(spec: HouseholdSpec | None = None) -> tuple[DatasetSplits, KnowledgeGraph]:
    spec = spec or HouseholdSpec()
    rng = np.random.default_rng(spec.seed)

    entities = Vocab()
    rooms = [entities.add(ROOM_NAMES[i] if i < len(ROOM_NAMES) else f"room{i}")
             for i in range(spec.n_rooms)]
    locations = [entities.add(f"loc{i}") for i in range(spec.n_locations)]
    objects = [entities.add(f"obj{i}") for i in range(spec.n_objects)]
    actions = [entities.add(f"act{i}") for i in range(spec.n_actions)]
    states = [entities.add(f"state{i}") for i in range(spec.n_states)]
    relations = Vocab(RELATIONS)
    rel = {name: relations.id(name) for name in RELATIONS}

    def pick(pool, n):
        n = min(n, len(pool))
        idx = rng.choice(len(pool), size=n, replace=False)
        return [pool[i] for i in sorted(int(x) for x in idx)]

    facts: set[Triple] = set()

    def add(name, h, t):
        facts.add(Triple(h, rel[name], t))

    # locations anchor rooms
    loc_rooms: dict[int, list[int]] = {}
    for loc in locations:
        loc_rooms[loc] = pick(rooms, int(rng.integers(1, 3)))
        for room in loc_rooms[loc]:
            add("LocInRoom", loc, room)

    # objects sit in/on locations, hence in rooms
    lo, hi = spec.locations_per_object
    for obj in objects:
        spots = pick(locations, int(rng.integers(lo, hi + 1)))
        for spot in spots:
            add("ObjOnLoc" if rng.integers(2) else "ObjInLoc", obj, spot)
            for room in loc_rooms[spot]:
                add("ObjInRoom", obj, room)

    # actions cause states
    action_effect: dict[int, int] = {}
    for act in actions:
        action_effect[act] = states[int(rng.integers(len(states)))]
        add("HasEffect", act, action_effect[act])

    # objects afford actions, hence can reach the caused states
    lo, hi = spec.actions_per_object
    obj_actions: dict[int, list[int]] = {}
    for obj in objects:
        obj_actions[obj] = pick(actions, int(rng.integers(lo, hi + 1)))
        for act in obj_actions[obj]:
            add("ObjCanBe", obj, act)
            add("ObjHasState", obj, action_effect[act])
        for st in pick(states, spec.extra_state_facts):
            add("ObjHasState", obj, st)

    # tools serve actions and operate on objects affording them
    tools = pick(objects, spec.n_tools)
    for tool in tools:
        for act in pick(actions, int(rng.integers(1, 3))):
            add("ObjUsedTo", tool, act)
            for obj in objects:
                if obj != tool and act in obj_actions[obj] and rng.uniform() < spec.operates_on_keep:
                    add("OperatesOn", tool, obj)

    # a few symmetric action/state opposites
    for pool, name in ((actions, "InverseActionOf"), (states, "InverseStateOf")):
        shuffled = pick(pool, len(pool))
        for a, b in zip(shuffled[0::2], shuffled[1::2]):
            if len([t for t in facts if t.relation == rel[name]]) >= len(pool):
                break
            add(name, a, b)
            add(name, b, a)

    # light uniform noise so the graph is not perfectly clean
    if spec.noise_rate > 0:
        category = {"HasEffect": (actions, states), "LocInRoom": (locations, rooms),
                    "ObjCanBe": (objects, actions), "ObjInLoc": (objects, locations),
                    "ObjInRoom": (objects, rooms), "ObjOnLoc": (objects, locations),
                    "ObjUsedTo": (objects, actions), "ObjHasState": (objects, states),
                    "OperatesOn": (objects, objects)}
        for name, (heads, tails) in category.items():
            count = sum(1 for t in facts if t.relation == rel[name])
            for _ in range(int(spec.noise_rate * count)):
                add(name, heads[int(rng.integers(len(heads)))], tails[int(rng.integers(len(tails)))])

    # split per relation, then pull symbols unseen in train back into train
    train, valid, test = [], [], []
    by_relation: dict[int, list[Triple]] = {}
    for t in sorted(facts):
        by_relation.setdefault(t.relation, []).append(t)
    for r in sorted(by_relation):
        rows = by_relation[r]
        order = rng.permutation(len(rows))
        n_valid = int(spec.valid_fraction * len(rows))
        n_test = int(spec.test_fraction * len(rows))
        valid.extend(rows[i] for i in order[:n_valid])
        test.extend(rows[i] for i in order[n_valid : n_valid + n_test])
        train.extend(rows[i] for i in order[n_valid + n_test :])

    train_ents = {e for t in train for e in (t.head, t.tail)}
    train_rels = {t.relation for t in train}

    def admissible(t: Triple) -> bool:
        return t.head in train_ents and t.tail in train_ents and t.relation in train_rels

    for bucket in (valid, test):
        moved = [t for t in bucket if not admissible(t)]
        bucket[:] = [t for t in bucket if admissible(t)]
        train.extend(moved)

    splits = DatasetSplits(
        train=[LabeledTriple(t) for t in sorted(train)],
        valid=[LabeledTriple(t) for t in sorted(valid)],
        test=[LabeledTriple(t) for t in sorted(test)],
    )
    graph = KnowledgeGraph.from_triples(entities, relations, splits.positives("train"))
    return splits, graph
