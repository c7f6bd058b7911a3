"""Re-express summary step sequences as key-step sequences by greedy alignment."""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from typing import Any

import numpy as np

from .cluster import KeyStep
from .errors import InvalidInputError
from .providers import Embedder
from .summarize import SummaryStepSequence


@dataclass(frozen=True)
class LabeledStep:
    key_step_id: int
    matched_sentence: str
    source_position: int


@dataclass
class KeyStepSequence:
    video_id: str
    items: list[LabeledStep]

    def __post_init__(self) -> None:
        ids = [it.key_step_id for it in self.items]
        if len(set(ids)) != len(ids):
            raise InvalidInputError(f"sequence {self.video_id!r} repeats a key step: {ids}")
        positions = [it.source_position for it in self.items]
        if any(b <= a for a, b in zip(positions, positions[1:])):
            raise InvalidInputError(f"sequence {self.video_id!r} positions not increasing: {positions}")

    @property
    def step_ids(self) -> list[int]:
        return [it.key_step_id for it in self.items]

    def __len__(self) -> int:
        return len(self.items)

    def to_dict(self) -> dict[str, Any]:
        return {
            "video_id": self.video_id,
            "items": [
                {"key_step_id": it.key_step_id, "matched_sentence": it.matched_sentence,
                 "source_position": it.source_position}
                for it in self.items
            ],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> KeyStepSequence:
        items = [
            LabeledStep(int(it["key_step_id"]), it.get("matched_sentence", ""), int(it["source_position"]))
            for it in data["items"]
        ]
        return cls(str(data["video_id"]), items)

    @classmethod
    def from_ids(cls, video_id: str, step_ids: Sequence[int], labels: Mapping[int, str] | None = None):
        labels = labels or {}
        return cls(video_id, [LabeledStep(s, labels.get(s, f"k{s}"), i) for i, s in enumerate(step_ids)])


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def step_cluster_similarity(g_step: np.ndarray, k: KeyStep) -> tuple[float, str]:
    """Best cosine between ``g_step`` and any member of ``k`` (ties: first member)."""
    if not k.members:
        raise InvalidInputError(f"key step {k.id} has no members")
    sims = np.stack([_unit(m.embedding) for m in k.members]) @ _unit(g_step)
    best = int(np.argmax(sims))
    return float(sims[best]), k.members[best].sentence


def alignment_matrices(step_vectors: Sequence[np.ndarray], key_steps: Sequence[KeyStep]):
    """C[i, j] = best cosine of summary step i to cluster j; H[i][j] = the member attaining it."""
    c = np.zeros((len(step_vectors), len(key_steps)))
    h: list[list[str]] = []
    for i, vec in enumerate(step_vectors):
        row = []
        for j, k in enumerate(key_steps):
            c[i, j], sentence = step_cluster_similarity(vec, k)
            row.append(sentence)
        h.append(row)
    return c, h


def greedy_alignment(c: np.ndarray) -> list[tuple[int, int]]:
    """Greedy one-to-one matching of rows to columns, strongest positive entry first.

    Equivalent to repeatedly taking the argmax (ties: smallest row, then column)
    and zeroing its row and column until no entry exceeds 0. Result sorted by row.
    """
    rows, cols = np.nonzero(c > 0)
    order = sorted(zip(rows.tolist(), cols.tolist()), key=lambda rc: (-c[rc], rc[0], rc[1]))
    used_rows: set[int] = set()
    used_cols: set[int] = set()
    pairs = []
    for a, b in order:
        if a in used_rows or b in used_cols:
            continue
        pairs.append((a, b))
        used_rows.add(a)
        used_cols.add(b)
    return sorted(pairs)


def label_sequence(
    g: SummaryStepSequence,
    key_steps: Sequence[KeyStep],
    embedder: Embedder | None = None,
    *,
    step_vectors: Sequence[np.ndarray] | None = None,
) -> KeyStepSequence:
    if not key_steps:
        raise InvalidInputError("need at least one key step")
    if step_vectors is None:
        if embedder is None:
            raise InvalidInputError("need an embedder or precomputed step vectors")
        step_vectors = [embedder.embed(s) for s in g.steps]
    if len(step_vectors) != len(g.steps):
        raise InvalidInputError("one vector per summary step required")
    if not g.steps:
        return KeyStepSequence(g.video_id, [])
    c, h = alignment_matrices(step_vectors, key_steps)
    items = [LabeledStep(key_steps[b].id, h[a][b], a) for a, b in greedy_alignment(c)]
    return KeyStepSequence(g.video_id, items)


def label_all(
    sequences: Sequence[SummaryStepSequence], key_steps: Sequence[KeyStep], embedder: Embedder
) -> list[KeyStepSequence]:
    cache: dict[str, np.ndarray] = {}

    def vec(s: str) -> np.ndarray:
        if s not in cache:
            cache[s] = embedder.embed(s)
        return cache[s]

    return [label_sequence(g, key_steps, step_vectors=[vec(s) for s in g.steps]) for g in sequences]
