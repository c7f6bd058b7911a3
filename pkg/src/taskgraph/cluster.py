"""Key-step discovery: maximal cliques of a cosine-similarity graph, then greedy merging."""

from __future__ import annotations

import logging
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass
from typing import Any

import numpy as np

from .errors import InvalidInputError, NoKeyStepsError
from .providers import Embedder
from .summarize import SummaryStepSequence

log = logging.getLogger(__name__)

# similarities closer than this count as tied (summation order jitters the last bits)
_TIE_EPS = 1e-12

Graph = dict[int, set[int]]
Clique = tuple[int, ...]


@dataclass(frozen=True, eq=False)
class Member:
    sentence: str
    video_id: str
    position: int
    embedding: np.ndarray

    def to_dict(self) -> dict[str, Any]:
        return {"sentence": self.sentence, "video_id": self.video_id, "position": self.position}


@dataclass(eq=False)
class KeyStep:
    id: int
    members: list[Member]
    label: str

    def __post_init__(self) -> None:
        if not self.members:
            raise InvalidInputError(f"key step {self.id} has no members")
        if self.label not in {m.sentence for m in self.members}:
            raise InvalidInputError(f"label of key step {self.id} is not one of its members")

    @property
    def videos(self) -> set[str]:
        return {m.video_id for m in self.members}

    def matrix(self) -> np.ndarray:
        return np.stack([m.embedding for m in self.members])

    def to_dict(self) -> dict[str, Any]:
        return {"id": self.id, "label": self.label, "members": [m.to_dict() for m in self.members]}


@dataclass(frozen=True)
class ClusterConfig:
    sim_threshold: float = 0.9
    min_clique_size: int = 6
    merge_sim_threshold: float = 0.75
    merge_overlap_threshold: float = 0.10

    def __post_init__(self) -> None:
        for name in ("sim_threshold", "merge_sim_threshold", "merge_overlap_threshold"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise InvalidInputError(f"{name} must lie in [0, 1], got {value}")
        if self.min_clique_size < 2:
            raise InvalidInputError("min_clique_size must be >= 2")


def _stack(embeddings: Sequence[np.ndarray]) -> np.ndarray:
    if not embeddings:
        return np.zeros((0, 0))
    dims = {np.shape(e) for e in embeddings}
    if len(dims) != 1 or len(next(iter(dims))) != 1:
        raise InvalidInputError(f"embeddings must share one dimension, got shapes {sorted(dims)}")
    return np.stack(embeddings).astype(np.float64)


def cosine_matrix(embeddings: Sequence[np.ndarray]) -> np.ndarray:
    m = _stack(embeddings)
    if m.size == 0:
        return np.zeros((len(embeddings), len(embeddings)))
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise InvalidInputError("zero embedding vector")
    m = m / norms
    return m @ m.T


def build_similarity_graph(embeddings: Sequence[np.ndarray], threshold: float) -> Graph:
    """Undirected graph over sentence indices; edge iff cosine >= threshold."""
    sims = cosine_matrix(embeddings)
    n = len(embeddings)
    graph: Graph = {i: set() for i in range(n)}
    rows, cols = np.nonzero(np.triu(sims >= threshold, k=1))
    for i, j in zip(rows.tolist(), cols.tolist()):
        graph[i].add(j)
        graph[j].add(i)
    return graph


def enumerate_maximal_cliques(graph: Mapping[int, Iterable[int]]) -> list[Clique]:
    """All maximal cliques (Bron-Kerbosch with Tomita pivoting), sorted lexicographically."""
    adj: Graph = {v: set() for v in graph}
    for v, neighbours in graph.items():
        for u in neighbours:
            if u != v:
                adj[v].add(u)
                adj.setdefault(u, set()).add(v)

    found: list[Clique] = []
    if not adj:
        return found
    # explicit stack instead of recursion: clique sizes can run into the hundreds
    stack: list[tuple[list[int], set[int], set[int]]] = [([], set(adj), set())]
    while stack:
        r, p, x = stack.pop()
        if not p:
            if not x:
                found.append(tuple(sorted(r)))
            continue
        pivot = max(p | x, key=lambda u: (len(adj[u] & p), -u))
        for v in sorted(p - adj[pivot]):
            stack.append((r + [v], p & adj[v], x & adj[v]))
            p = p - {v}
            x = x | {v}
    return sorted(found)


def retain_cliques(cliques: Iterable[Clique], min_clique_size: int) -> list[Clique]:
    return [tuple(c) for c in cliques if len(c) >= min_clique_size]


def filter_cliques(cliques: Sequence[Clique], min_clique_size: int) -> list[Clique]:
    """Keep large cliques and make them disjoint.

    A vertex shared by several retained cliques goes to the largest one (ties:
    lexicographically first). Cliques that lose vertices this way are dropped
    when they fall below ``min_clique_size``. Output keeps input order.
    """
    kept = retain_cliques(cliques, min_clique_size)
    priority = sorted(range(len(kept)), key=lambda i: (-len(kept[i]), kept[i]))
    owner: dict[int, int] = {}
    for i in priority:
        for v in kept[i]:
            owner.setdefault(v, i)
    result = []
    for i, clique in enumerate(kept):
        mine = tuple(v for v in clique if owner[v] == i)
        if len(mine) >= min_clique_size:
            result.append(mine)
        elif mine:
            log.debug("dropping clique remainder %s (size %d)", mine, len(mine))
    return result


def _video_sets(cluster: Iterable[Member], allowed: set[str] | None) -> set[str]:
    videos = {m.video_id for m in cluster}
    return videos & allowed if allowed is not None else videos


def sequence_overlap(
    a: KeyStep | Sequence[Member],
    b: KeyStep | Sequence[Member],
    sequences: Sequence[SummaryStepSequence] | None = None,
) -> float:
    """Share of videos containing both clusters, relative to the smaller support."""
    allowed = {s.video_id for s in sequences} if sequences is not None else None
    va = _video_sets(a.members if isinstance(a, KeyStep) else a, allowed)
    vb = _video_sets(b.members if isinstance(b, KeyStep) else b, allowed)
    denom = min(len(va), len(vb))
    if denom == 0:
        return 0.0
    return len(va & vb) / denom


def _medoid(members: Sequence[Member]) -> str:
    m = np.stack([x.embedding for x in members])
    centre = m.mean(axis=0)
    return members[int(np.argmax(m @ centre))].sentence


def greedy_merge(
    clusters: Sequence[Sequence[Member]],
    config: ClusterConfig,
    sequences: Sequence[SummaryStepSequence] | None = None,
) -> tuple[list[list[int]], list[tuple[tuple[int, ...], tuple[int, ...]]]]:
    """Merge to a fixpoint; return groups of input-cluster indices and the merge trace.

    Each round merges the qualifying pair (similarity >= merge_sim_threshold and
    overlap <= merge_overlap_threshold) with the highest mean pairwise cosine;
    ties go to the pair whose groups come first.
    """
    groups: list[list[int]] = [[i] for i in range(len(clusters))]
    if not clusters:
        return groups, []
    mats = [np.stack([m.embedding for m in c]) for c in clusters]
    sizes = [len(c) for c in clusters]
    # sums[i][j] = sum of all pairwise cosines between groups i and j
    sums = np.array([[float((a @ b.T).sum()) for b in mats] for a in mats])
    members: list[list[Member]] = [list(c) for c in clusters]
    trace = []

    while True:
        best: tuple[float, int, int] | None = None
        n = len(groups)
        for i in range(n):
            for j in range(i + 1, n):
                sim = sums[i, j] / (sizes[i] * sizes[j])
                if sim < config.merge_sim_threshold:
                    continue
                if sequence_overlap(members[i], members[j], sequences) > config.merge_overlap_threshold:
                    continue
                if best is None or sim > best[0] + _TIE_EPS:
                    best = (sim, i, j)
        if best is None:
            return groups, trace
        _, i, j = best
        trace.append((tuple(groups[i]), tuple(groups[j])))
        groups[i] = groups[i] + groups[j]
        members[i] = members[i] + members[j]
        sizes[i] += sizes[j]
        sums[i, :] += sums[j, :]
        sums[:, i] += sums[:, j]
        del groups[j], members[j], sizes[j]
        sums = np.delete(np.delete(sums, j, axis=0), j, axis=1)


def merge_clusters(
    clusters: Sequence[Sequence[Member]],
    sequences: Sequence[SummaryStepSequence] | None = None,
    config: ClusterConfig | None = None,
) -> list[KeyStep]:
    config = config or ClusterConfig()
    groups, _ = greedy_merge(clusters, config, sequences)
    key_steps = []
    for idx, group in enumerate(groups, start=1):
        members = [m for g in group for m in clusters[g]]
        key_steps.append(KeyStep(id=idx, members=members, label=_medoid(members)))
    return key_steps


def embed_sequences(sequences: Sequence[SummaryStepSequence], embedder: Embedder) -> list[Member]:
    cache: dict[str, np.ndarray] = {}
    members = []
    for seq in sequences:
        for pos, sentence in enumerate(seq.steps):
            if sentence not in cache:
                cache[sentence] = embedder.embed(sentence)
            members.append(Member(sentence, seq.video_id, pos, cache[sentence]))
    return members


def identify_key_steps(
    sequences: Sequence[SummaryStepSequence],
    embedder: Embedder,
    config: ClusterConfig | None = None,
) -> list[KeyStep]:
    config = config or ClusterConfig()
    if not sequences:
        raise InvalidInputError("need at least one summary step sequence")
    members = embed_sequences(sequences, embedder)
    graph = build_similarity_graph([m.embedding for m in members], config.sim_threshold)
    cliques = filter_cliques(enumerate_maximal_cliques(graph), config.min_clique_size)
    if not cliques:
        raise NoKeyStepsError(
            f"no clique of >= {config.min_clique_size} sentences at similarity {config.sim_threshold}"
        )
    clusters = [[members[v] for v in clique] for clique in cliques]
    key_steps = merge_clusters(clusters, sequences, config)
    log.info("%d sentences -> %d cliques -> %d key steps", len(members), len(cliques), len(key_steps))
    return key_steps


def key_steps_from_dicts(records: Sequence[Mapping[str, Any]], embedder: Embedder) -> list[KeyStep]:
    """Rebuild key steps from the clusters file, re-embedding every member."""
    if not isinstance(records, list):
        raise InvalidInputError("clusters file must hold a JSON array")
    cache: dict[str, np.ndarray] = {}
    out = []
    for rec in records:
        members = []
        for m in rec["members"]:
            s = m["sentence"]
            if s not in cache:
                cache[s] = embedder.embed(s)
            members.append(Member(s, str(m["video_id"]), int(m["position"]), cache[s]))
        out.append(KeyStep(id=int(rec["id"]), members=members, label=rec["label"]))
    ids = [k.id for k in out]
    if ids != list(range(1, len(out) + 1)):
        raise InvalidInputError(f"key step ids must be 1..m in order, got {ids}")
    return out
