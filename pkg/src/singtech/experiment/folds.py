"""Singer-disjoint fold planning with greedy per-class balancing."""

import json
from collections import Counter
from dataclasses import dataclass

import numpy as np

from ..annotation import TechniqueClass, VOCABULARY


@dataclass(frozen=True)
class Fold:
    index: int
    test: tuple
    validation: tuple
    train: tuple


@dataclass(frozen=True)
class FoldPlan:
    k: int
    seed: int
    groups: tuple        # tuple of singer-id tuples
    folds: tuple         # tuple of Fold
    balance: dict        # group index -> {class: event count}

    def to_dict(self):
        return {
            "k": self.k,
            "seed": self.seed,
            "groups": [list(g) for g in self.groups],
            "folds": [{"index": f.index, "test": list(f.test), "validation": list(f.validation),
                       "train": list(f.train)} for f in self.folds],
            "balance": {str(g): counts for g, counts in self.balance.items()},
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data):
        folds = tuple(Fold(f["index"], tuple(f["test"]), tuple(f["validation"]), tuple(f["train"]))
                      for f in data["folds"])
        balance = {int(g): counts for g, counts in data["balance"].items()}
        return cls(data["k"], data["seed"], tuple(tuple(g) for g in data["groups"]), folds, balance)


def singer_class_counts(corpus, classes=VOCABULARY):
    """``{singer: Counter(class -> events)}`` in first-appearance singer order."""
    counts = {s: Counter() for s in corpus.singers()}
    for tr in corpus:
        for ev in tr.events:
            if ev.label in classes:
                counts[tr.singer_id][ev.label.value] += 1
    return counts


def _spread(totals):
    return float((totals.max(axis=0) - totals.min(axis=0)).sum())


def make_folds(corpus, k=7, seed=0, classes=VOCABULARY):
    """Partition singers into ``k`` groups and derive the rotation of folds.

    Singers are visited by descending total event count (ties in a seeded
    random order).  The first ``k`` each open a group; every later singer joins
    the group that minimises the summed per-class max-min spread of group
    totals, preferring smaller groups on ties.  Fold i tests on group i,
    validates on group i+1 (cyclically) and trains on the rest.  With k = 2
    there is no third group: the other group is trained on and the validation
    set is left empty.
    """
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    counts = singer_class_counts(corpus, classes)
    singers = list(counts)
    if len(singers) < k:
        raise ValueError(f"{len(singers)} singers cannot fill {k} folds")
    names = [c.value if isinstance(c, TechniqueClass) else str(c) for c in classes]
    matrix = np.array([[counts[s][c] for c in names] for s in singers], dtype=np.float64)

    rng = np.random.default_rng(seed)
    tiebreak = rng.permutation(len(singers))
    order = sorted(range(len(singers)), key=lambda i: (-matrix[i].sum(), tiebreak[i]))

    totals = np.zeros((k, len(names)))
    members = [[] for _ in range(k)]
    for rank, i in enumerate(order):
        if rank < k:
            g = rank
        else:
            best = None
            for cand in range(k):
                trial = totals.copy()
                trial[cand] += matrix[i]
                key = (_spread(trial), len(members[cand]), cand)
                if best is None or key < best:
                    best = key
            g = best[2]
        totals[g] += matrix[i]
        members[g].append(singers[i])

    groups = tuple(tuple(m) for m in members)
    folds = []
    for i in range(k):
        j = (i + 1) % k
        if k == 2:
            folds.append(Fold(i, groups[i], (), groups[j]))
            continue
        train = tuple(s for g in range(k) if g not in (i, j) for s in groups[g])
        folds.append(Fold(i, groups[i], groups[j], train))
    balance = {g: {c: int(totals[g, n]) for n, c in enumerate(names)} for g in range(k)}
    return FoldPlan(k, seed, groups, tuple(folds), balance)
