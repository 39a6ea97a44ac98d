"""Synthetic multi-hop lookup task.

A seeded world assigns every (relation, entity) pair a target entity.  A
question names a start entity and a sequence of 3-5 relations to follow,
for example ``s:PQP?``; the answer is the entity reached.  Zero to two
distractor clauses of the same shape follow the question mark and must be
ignored.  The reasoning trace lists one hop per line, e.g. ``P(s)=i``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from imgcot.errors import ContractError
from imgcot.numerics.rng import make_rng

ENTITIES = "abcdefghijklmnopqrstuvwx"
RELATIONS = "PQR"


@dataclass(frozen=True)
class ChainWorld:
    entities: str
    relations: str
    table: dict = field(compare=False)

    @classmethod
    def generate(cls, seed: int = 0, entities: str = ENTITIES, relations: str = RELATIONS) -> "ChainWorld":
        rng = make_rng(seed, "chainlookup", "world")
        table = {r: {e: entities[int(rng.integers(len(entities)))] for e in entities} for r in relations}
        return cls(entities, relations, table)

    def follow(self, start: str, rels: str) -> list:
        chain = [start]
        for r in rels:
            chain.append(self.table[r][chain[-1]])
        return chain


@dataclass(frozen=True)
class ChainItem:
    id: str
    split: str
    question: str
    answer: str
    steps: tuple

    @property
    def cot(self) -> str:
        return "\n".join(self.steps)

    def to_record(self) -> dict:
        return {"id": self.id, "split": self.split, "question": self.question, "answer": self.answer, "cot": self.cot}


def _clause(start: str, rels: str) -> str:
    return f"{start}:{rels}"


def generate(n_train: int = 2000, n_test: int = 500, seed: int = 0, hops=(3, 5), distractors=(0, 2),
             world: ChainWorld | None = None) -> tuple:
    """Returns ``(train_items, test_items)``; no (start, relations) query appears twice."""
    world = world or ChainWorld.generate(seed)
    lo, hi = hops
    if not (1 <= lo <= hi):
        raise ContractError("hops must satisfy 1 <= min <= max")
    capacity = len(world.entities) * sum(len(world.relations) ** h for h in range(lo, hi + 1))
    total = n_train + n_test
    if total > capacity:
        raise ContractError(f"only {capacity} distinct questions exist, asked for {total}")
    rng = make_rng(seed, "chainlookup", "items")
    seen = set()
    items = []
    while len(items) < total:
        h = int(rng.integers(lo, hi + 1))
        start = world.entities[int(rng.integers(len(world.entities)))]
        rels = "".join(world.relations[int(j)] for j in rng.integers(len(world.relations), size=h))
        if (start, rels) in seen:
            continue
        seen.add((start, rels))
        chain = world.follow(start, rels)
        extra = []
        for _ in range(int(rng.integers(distractors[0], distractors[1] + 1))):
            k = int(rng.integers(1, 3))
            extra.append(_clause(world.entities[int(rng.integers(len(world.entities)))],
                                 "".join(world.relations[int(j)] for j in rng.integers(len(world.relations), size=k))))
        question = " ".join([_clause(start, rels) + "?"] + extra)
        steps = tuple(f"{r}({chain[i]})={chain[i + 1]}" for i, r in enumerate(rels))
        idx = len(items)
        split = "train" if idx < n_train else "test"
        items.append(ChainItem(f"{split}-{idx if idx < n_train else idx - n_train:05d}", split, question, chain[-1], steps))
    return items[:n_train], items[n_train:]
