"""Precondition inference: per-step decision trees over completion vectors, DNF export,
AND/OR graph consolidation and graph prediction accuracy.

Key steps are numbered 1..m; bit ``p - 1`` of a completion vector says whether
key step ``p`` has been performed.
"""

from __future__ import annotations

import graphlib
import logging
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import CyclicGraphError, InvalidInputError
from .label import KeyStepSequence

log = logging.getLogger(__name__)

EXACT_LIMIT = 16
SAMPLE_COUNT = 10_000
_EPS = 1e-12


@dataclass(frozen=True)
class EligibilityExample:
    completion: tuple[int, ...]
    step: int
    label: bool
    weight: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 < self.weight <= 1.0:
            raise InvalidInputError(f"example weight must lie in (0, 1], got {self.weight}")


def _step_ids(h: KeyStepSequence | Sequence[int]) -> list[int]:
    return h.step_ids if isinstance(h, KeyStepSequence) else list(h)


def to_examples(
    h: KeyStepSequence | Sequence[int], m: int, negative_weight: float = 0.3
) -> list[EligibilityExample]:
    """Positive example for each executed step, with the completion of everything
    strictly before it; weak negatives for steps still to come at each earlier point."""
    steps = _step_ids(h)
    if len(set(steps)) != len(steps):
        raise InvalidInputError(f"key step sequence repeats a step: {steps}")
    if any(not 1 <= s <= m for s in steps):
        raise InvalidInputError(f"key step ids must lie in 1..{m}: {steps}")
    out = []
    done = [0] * m
    for i, step in enumerate(steps):
        c = tuple(done)
        out.append(EligibilityExample(c, step, True, 1.0))
        for later in steps[i + 1 :]:
            out.append(EligibilityExample(c, later, False, negative_weight))
        done[step - 1] = 1
    return out


@dataclass(frozen=True)
class DnfPrecondition:
    """OR of AND-terms of required key steps.

    ``always_true`` with no terms means no precondition; no terms and
    ``always_true=False`` means the step is never eligible.
    """

    terms: tuple[frozenset[int], ...] = ()
    always_true: bool = True

    @classmethod
    def from_terms(cls, terms: Iterable[Iterable[int]]) -> DnfPrecondition:
        sets = {frozenset(t) for t in terms}
        if frozenset() in sets:
            return cls((), True)
        kept = [t for t in sets if not any(o < t for o in sets)]
        kept.sort(key=lambda t: (len(t), sorted(t)))
        return cls(tuple(kept), False) if kept else cls((), False)

    @classmethod
    def never(cls) -> DnfPrecondition:
        return cls((), False)

    @property
    def trivial(self) -> bool:
        return self.always_true

    def literals(self) -> set[int]:
        return set().union(*self.terms) if self.terms else set()

    def satisfied(self, completed: Iterable[int]) -> bool:
        if self.always_true:
            return True
        done = set(completed)
        return any(t <= done for t in self.terms)

    def evaluate_matrix(self, c: np.ndarray) -> np.ndarray:
        if self.always_true:
            return np.ones(len(c), dtype=bool)
        out = np.zeros(len(c), dtype=bool)
        for t in self.terms:
            out |= np.all(c[:, [p - 1 for p in sorted(t)]] == 1, axis=1)
        return out

    def to_json(self) -> list[list[int]] | None:
        if self.always_true:
            return []
        if not self.terms:
            return None
        return [sorted(t) for t in self.terms]

    @classmethod
    def from_json(cls, data: list[list[int]] | None) -> DnfPrecondition:
        if data is None:
            return cls.never()
        if not isinstance(data, list) or not all(isinstance(t, list) for t in data):
            raise InvalidInputError(f"precondition must be a list of literal lists, got {data!r}")
        if not data:
            return cls()
        return cls.from_terms([int(x) for x in t] for t in data)

    def __str__(self) -> str:
        if self.always_true:
            return "TRUE"
        if not self.terms:
            return "FALSE"
        return " | ".join("&".join(f"k{p}" for p in sorted(t)) for t in self.terms)


@dataclass
class TreeNode:
    """Internal node when ``bit`` is set (a key-step id), leaf otherwise."""

    positive_count: int
    negative_weight: float
    eligible: bool
    bit: int | None = None
    low: TreeNode | None = None
    high: TreeNode | None = None

    @property
    def is_leaf(self) -> bool:
        return self.bit is None

    def to_json(self) -> dict[str, Any]:
        if self.is_leaf:
            return {
                "eligible": self.eligible,
                "negative_weight": round(self.negative_weight, 10),
                "positive_count": self.positive_count,
            }
        return {"bit": self.bit, "low": self.low.to_json(), "high": self.high.to_json()}

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> TreeNode:
        if "bit" in data:
            low, high = cls.from_json(data["low"]), cls.from_json(data["high"])
            return cls(
                low.positive_count + high.positive_count,
                low.negative_weight + high.negative_weight,
                low.eligible or high.eligible,
                int(data["bit"]),
                low,
                high,
            )
        return cls(int(data["positive_count"]), float(data["negative_weight"]), bool(data["eligible"]))


@dataclass
class PreconditionFunction:
    step: int
    tree: TreeNode
    m: int

    def __call__(self, c: Sequence[int]) -> bool:
        node = self.tree
        while not node.is_leaf:
            node = node.high if c[node.bit - 1] else node.low
        return node.eligible

    def evaluate_matrix(self, c: np.ndarray) -> np.ndarray:
        out = np.zeros(len(c), dtype=bool)

        def walk(node: TreeNode, mask: np.ndarray) -> None:
            if node.is_leaf:
                out[mask] = node.eligible
                return
            bit = c[:, node.bit - 1] == 1
            walk(node.high, mask & bit)
            walk(node.low, mask & ~bit)

        walk(self.tree, np.ones(len(c), dtype=bool))
        return out

    def paths(self) -> list[tuple[dict[int, int], TreeNode]]:
        """Every root-to-leaf path as (tested bit -> value, leaf)."""
        found = []
        stack = [(self.tree, {})]
        while stack:
            node, tests = stack.pop()
            if node.is_leaf:
                found.append((tests, node))
            else:
                stack.append((node.low, {**tests, node.bit: 0}))
                stack.append((node.high, {**tests, node.bit: 1}))
        return found


def _gini_split(pos: np.ndarray, neg: np.ndarray, total: float) -> np.ndarray:
    # weighted Gini of a split, per candidate: sum over children of 2*wp*wn / (W_child * W)
    size = pos + neg
    with np.errstate(divide="ignore", invalid="ignore"):
        part = np.where(size > 0, 2.0 * pos * neg / (size * total), 0.0)
    return part


def fit_precondition_tree(
    examples: Sequence[EligibilityExample],
    m: int,
    step: int | None = None,
    min_leaf_fraction: float = 0.0,
) -> PreconditionFunction:
    """Greedy top-down tree on completion bits minimising weighted Gini impurity.

    Splitting stops when a node is pure, no untested bit lowers the impurity,
    or every bit has been tested. A split is also refused when either child
    would carry less than ``min_leaf_fraction`` of the total example weight.
    Ties between bits go to the lowest key-step id. A leaf predicts eligible
    iff at least one positive example reaches it.
    """
    if step is None:
        step = examples[0].step if examples else 0
    if any(ex.step != step for ex in examples):
        raise InvalidInputError("examples must all concern the same step")
    if not any(ex.label for ex in examples):
        log.warning("key step %s has no positive examples; treating it as never eligible", step)
        neg = sum(ex.weight for ex in examples)
        return PreconditionFunction(step, TreeNode(0, neg, False), m)

    x = np.array([ex.completion for ex in examples], dtype=bool).reshape(len(examples), m)
    y = np.array([ex.label for ex in examples], dtype=bool)
    w = np.array([ex.weight for ex in examples], dtype=np.float64)
    wp_all = np.where(y, w, 0.0)
    wn_all = np.where(y, 0.0, w)
    floor = min_leaf_fraction * float(w.sum())

    def build(rows: np.ndarray, used: frozenset[int], depth: int) -> TreeNode:
        wp, wn = float(wp_all[rows].sum()), float(wn_all[rows].sum())
        count = int(y[rows].sum())
        leaf = TreeNode(count, wn, count > 0)
        if wp == 0.0 or wn == 0.0 or depth >= m:
            return leaf
        total = wp + wn
        parent = 2.0 * wp * wn / (total * total)
        xs = x[rows]
        pos_hi = wp_all[rows] @ xs
        neg_hi = wn_all[rows] @ xs
        impurity = _gini_split(pos_hi, neg_hi, total) + _gini_split(wp - pos_hi, wn - neg_hi, total)
        impurity[list(used)] = np.inf
        w_hi = pos_hi + neg_hi
        impurity[(w_hi < floor) | (total - w_hi < floor)] = np.inf
        best = float(impurity.min())
        if not best < parent - _EPS:
            return leaf
        bit = int(np.flatnonzero(impurity <= best + _EPS)[0])
        high_rows = rows[xs[:, bit]]
        low_rows = rows[~xs[:, bit]]
        node = TreeNode(count, wn, count > 0, bit + 1)
        node.high = build(high_rows, used | {bit}, depth + 1)
        node.low = build(low_rows, used | {bit}, depth + 1)
        return node

    return PreconditionFunction(step, build(np.arange(len(examples)), frozenset(), 0), m)


def tree_to_dnf(f: PreconditionFunction) -> DnfPrecondition:
    """One AND-term per eligible leaf, keeping only the bits tested as 1 on its path."""
    terms = [[b for b, v in tests.items() if v == 1] for tests, leaf in f.paths() if leaf.eligible]
    if not terms:
        return DnfPrecondition.never()
    return DnfPrecondition.from_terms(terms)


@dataclass(frozen=True)
class GraphNode:
    id: str
    kind: str  # "step" | "and" | "or"
    label: str


def step_node_id(p: int) -> str:
    return f"k{p}"


@dataclass
class TaskGraph:
    m: int
    preconditions: dict[int, DnfPrecondition]
    functions: dict[int, PreconditionFunction] = field(default_factory=dict)
    labels: dict[int, str] = field(default_factory=dict)
    nodes: list[GraphNode] = field(default_factory=list)
    edges: list[tuple[str, str]] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.m < 1:
            raise InvalidInputError("graph needs at least one key step")
        for p in range(1, self.m + 1):
            self.preconditions.setdefault(p, DnfPrecondition())
        bad = set(self.preconditions) - set(range(1, self.m + 1))
        for p, dnf in self.preconditions.items():
            bad |= {x for x in dnf.literals() if not 1 <= x <= self.m}
        if bad:
            raise InvalidInputError(f"key step ids outside 1..{self.m}: {sorted(bad)}")

    def label(self, p: int) -> str:
        return self.labels.get(p, f"k{p}")

    def eligible_matrix(self, c: np.ndarray) -> np.ndarray:
        """(N, m) boolean eligibility for an (N, m) 0/1 completion matrix."""
        c = np.asarray(c)
        if c.ndim != 2 or c.shape[1] != self.m:
            raise InvalidInputError(f"completion vectors must have length {self.m}")
        cols = []
        for p in range(1, self.m + 1):
            f = self.functions.get(p)
            cols.append(f.evaluate_matrix(c) if f is not None else self.preconditions[p].evaluate_matrix(c))
        return np.stack(cols, axis=1)

    def dependency_edges(self) -> set[tuple[int, int]]:
        return {(q, p) for p, dnf in self.preconditions.items() for q in dnf.literals()}

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "m": self.m,
            "nodes": [{"id": n.id, "kind": n.kind, "label": n.label} for n in self.nodes],
            "edges": [[s, d] for s, d in self.edges],
            "preconditions": {str(p): self.preconditions[p].to_json() for p in range(1, self.m + 1)},
        }
        if self.functions:
            out["functions"] = {str(p): f.tree.to_json() for p, f in sorted(self.functions.items())}
        return out

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> TaskGraph:
        try:
            m = int(data["m"])
            pre = {int(p): DnfPrecondition.from_json(v) for p, v in data.get("preconditions", {}).items()}
            labels = {}
            for node in data.get("nodes", []):
                if node.get("kind") == "step" and str(node["id"]).startswith("k"):
                    labels[int(str(node["id"])[1:])] = node["label"]
            functions = {
                int(p): PreconditionFunction(int(p), TreeNode.from_json(t), m)
                for p, t in data.get("functions", {}).items()
            }
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidInputError(f"malformed graph document: {exc}") from exc
        return consolidate_graph(pre, labels, m=m, functions=functions)


def find_cycle(edges: Iterable[tuple[int, int]], nodes: Iterable[int]) -> list[int] | None:
    sorter = graphlib.TopologicalSorter({n: set() for n in nodes})
    for src, dst in sorted(edges):
        sorter.add(dst, src)
    try:
        sorter.prepare()
    except graphlib.CycleError as exc:
        return list(exc.args[1])
    return None


def consolidate_graph(
    dnfs: Mapping[int, DnfPrecondition],
    key_steps: Sequence[Any] | Mapping[int, str] | None = None,
    *,
    m: int | None = None,
    functions: Mapping[int, PreconditionFunction] | None = None,
) -> TaskGraph:
    """Lay preconditions out as an AND/OR graph; single-argument AND/OR nodes are elided."""
    if isinstance(key_steps, Mapping):
        labels = dict(key_steps)
    elif key_steps is not None:
        labels = {k.id: k.label for k in key_steps}
    else:
        labels = {}
    if m is None:
        m = max([*dnfs, *labels, 0])
    graph = TaskGraph(m, dict(dnfs), dict(functions or {}), labels)
    cycle = find_cycle(graph.dependency_edges(), range(1, m + 1))
    if cycle is not None:
        raise CyclicGraphError(cycle)

    nodes = [GraphNode(step_node_id(p), "step", graph.label(p)) for p in range(1, m + 1)]
    edges: list[tuple[str, str]] = []
    for p in range(1, m + 1):
        dnf = graph.preconditions[p]
        if dnf.always_true or not dnf.terms:
            continue
        target = step_node_id(p)
        if len(dnf.terms) > 1:
            or_id = f"{target}.or"
            nodes.append(GraphNode(or_id, "or", "OR"))
            edges.append((or_id, target))
            target = or_id
        for t, term in enumerate(dnf.terms, start=1):
            lits = sorted(term)
            if len(lits) == 1:
                edges.append((step_node_id(lits[0]), target))
                continue
            and_id = f"{step_node_id(p)}.and{t}"
            nodes.append(GraphNode(and_id, "and", "AND"))
            edges.extend((step_node_id(q), and_id) for q in lits)
            edges.append((and_id, target))
    graph.nodes = nodes
    graph.edges = edges
    return graph


@dataclass(frozen=True)
class GraphConfig:
    negative_weight: float = 0.3
    # a lone weak negative must not carve out an "ineligible" region on its own
    min_leaf_fraction: float = 0.01

    def __post_init__(self) -> None:
        if not 0.0 < self.negative_weight <= 1.0:
            raise InvalidInputError(f"negative_weight must lie in (0, 1], got {self.negative_weight}")
        if not 0.0 <= self.min_leaf_fraction < 0.5:
            raise InvalidInputError(f"min_leaf_fraction must lie in [0, 0.5), got {self.min_leaf_fraction}")


def infer_graph(
    sequences: Sequence[KeyStepSequence | Sequence[int]],
    m: int,
    config: GraphConfig | None = None,
    labels: Sequence[Any] | Mapping[int, str] | None = None,
) -> TaskGraph:
    config = config or GraphConfig()
    if not sequences:
        raise InvalidInputError("need at least one key step sequence")
    per_step: dict[int, list[EligibilityExample]] = {p: [] for p in range(1, m + 1)}
    for h in sequences:
        for ex in to_examples(h, m, config.negative_weight):
            per_step[ex.step].append(ex)
    functions = {
        p: fit_precondition_tree(per_step[p], m, step=p, min_leaf_fraction=config.min_leaf_fraction)
        for p in range(1, m + 1)
    }
    dnfs = {p: tree_to_dnf(f) for p, f in functions.items()}
    return consolidate_graph(dnfs, labels, m=m, functions=functions)


def eligibility(g: TaskGraph, c: Sequence[int]) -> list[int]:
    if len(c) != g.m:
        raise InvalidInputError(f"completion vector has length {len(c)}, expected {g.m}")
    return [int(v) for v in g.eligible_matrix(np.asarray([c]))[0]]


def completion_vectors(m: int, mode: str = "exact", seed: int = 0, samples: int = SAMPLE_COUNT) -> np.ndarray:
    if mode not in ("exact", "sampled"):
        raise InvalidInputError(f"unknown accuracy mode {mode!r}")
    if mode == "exact" and m <= EXACT_LIMIT:
        codes = np.arange(2**m, dtype=np.int64)
        return ((codes[:, None] >> np.arange(m)) & 1).astype(np.int8)
    rng = np.random.default_rng(seed)
    return rng.integers(0, 2, size=(samples, m), dtype=np.int8)


def eval_accuracy(pred: TaskGraph, truth: TaskGraph, mode: str = "exact", seed: int = 0) -> float:
    """Mean over key steps of the rate at which predicted and true eligibility agree."""
    if pred.m != truth.m:
        raise InvalidInputError(f"graphs differ in size: {pred.m} vs {truth.m}")
    c = completion_vectors(pred.m, mode, seed)
    agree = pred.eligible_matrix(c) == truth.eligible_matrix(c)
    return float(agree.mean(axis=0).mean())
