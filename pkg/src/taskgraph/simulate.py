"""Synthetic demonstrations sampled from a known task graph."""

from __future__ import annotations

import random
from dataclasses import dataclass

from .errors import InvalidGraphError, InvalidInputError
from .graphinfer import DnfPrecondition, TaskGraph, consolidate_graph
from .label import KeyStepSequence, LabeledStep


@dataclass(frozen=True)
class RolloutConfig:
    count: int = 60
    seed: int = 0
    drop_prob: float = 0.0

    def __post_init__(self) -> None:
        if self.count < 1:
            raise InvalidInputError("rollout count must be >= 1")
        if not 0.0 <= self.drop_prob < 1.0:
            raise InvalidInputError("drop_prob must lie in [0, 1)")


def eligible_steps(g: TaskGraph, done: set[int]) -> list[int]:
    return [p for p in range(1, g.m + 1) if p not in done and g.preconditions[p].satisfied(done)]


def validate_ground_truth(g: TaskGraph) -> None:
    """Raise InvalidGraphError unless every step can eventually be performed."""
    done: set[int] = set()
    while len(done) < g.m:
        ready = eligible_steps(g, done)
        if not ready:
            stuck = sorted(set(range(1, g.m + 1)) - done)
            raise InvalidGraphError(f"steps {stuck} can never become eligible")
        done.update(ready)


def rollout(g: TaskGraph, seed: int, drop_prob: float = 0.0, video_id: str | None = None) -> KeyStepSequence:
    """Perform a uniformly random eligible, not-yet-completed step until all are done.

    With ``drop_prob`` a performed step is left out of the emitted sequence
    (it still counts as completed).
    """
    rng = random.Random(seed)
    done: set[int] = set()
    items = []
    for position in range(g.m):
        ready = eligible_steps(g, done)
        if not ready:
            raise InvalidGraphError(f"no eligible step after completing {sorted(done)}")
        step = rng.choice(ready)
        done.add(step)
        if drop_prob and rng.random() < drop_prob:
            continue
        items.append(LabeledStep(step, g.label(step), position))
    return KeyStepSequence(video_id or f"sim-{seed:05d}", items)


def generate_dataset(g: TaskGraph, config: RolloutConfig | None = None) -> list[KeyStepSequence]:
    config = config or RolloutConfig()
    validate_ground_truth(g)
    return [rollout(g, config.seed + i, config.drop_prob) for i in range(config.count)]


def _closure(term: frozenset[int], necessary: dict[int, frozenset[int]]) -> frozenset[int]:
    out = set(term)
    for lit in term:
        out |= necessary[lit]
    return frozenset(out)


def reduce_terms(
    terms: list[frozenset[int]], necessary: dict[int, frozenset[int]]
) -> list[frozenset[int]]:
    """Drop literals and terms implied by other literals/terms on every reachable state."""
    reduced = {frozenset(l for l in t if not any(l in necessary[o] for o in t if o != l)) for t in terms}
    ordered = sorted(reduced, key=lambda t: (len(t), sorted(t)))
    while True:
        closures = {t: _closure(t, necessary) for t in ordered}
        redundant = [t for t in ordered if any(o != t and o <= closures[t] for o in ordered)]
        if not redundant:
            return ordered
        ordered.remove(redundant[-1])


def random_graph(m: int, density: float, seed: int, or_prob: float = 0.2) -> TaskGraph:
    """Random acyclic positive-literal ground truth in reduced form.

    Steps are placed in a random order; each step takes every earlier step as an
    AND literal with probability ``density``. A step that drew at least two
    literals becomes, with probability ``or_prob``, an OR of two AND-terms that
    split those literals. Literals and terms implied by others are then removed,
    so ``density=1`` without ORs yields a plain chain.
    """
    if m < 2:
        raise InvalidInputError("random graphs need m >= 2")
    if not 0.0 <= density <= 1.0:
        raise InvalidInputError("density must lie in [0, 1]")
    rng = random.Random(seed)
    order = list(range(1, m + 1))
    rng.shuffle(order)
    necessary: dict[int, frozenset[int]] = {}
    pre: dict[int, DnfPrecondition] = {}
    for t, step in enumerate(order):
        lits = [q for q in order[:t] if rng.random() < density]
        if len(lits) >= 2 and rng.random() < or_prob:
            rng.shuffle(lits)
            cut = rng.randint(1, len(lits) - 1)
            terms = [frozenset(lits[:cut]), frozenset(lits[cut:])]
        else:
            terms = [frozenset(lits)] if lits else []
        if not terms:
            pre[step] = DnfPrecondition()
            necessary[step] = frozenset()
            continue
        terms = reduce_terms(terms, necessary)
        pre[step] = DnfPrecondition.from_terms(terms)
        necessary[step] = frozenset.intersection(*(_closure(t, necessary) for t in terms))
    return consolidate_graph(pre, m=m)
