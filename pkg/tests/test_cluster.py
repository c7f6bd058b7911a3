import inspect
import itertools
import math
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import DictEmbedder, check_golden
from taskgraph import jsonio
from taskgraph.cluster import (
    ClusterConfig,
    KeyStep,
    Member,
    build_similarity_graph,
    enumerate_maximal_cliques,
    filter_cliques,
    greedy_merge,
    identify_key_steps,
    key_steps_from_dicts,
    merge_clusters,
    retain_cliques,
    sequence_overlap,
)
from taskgraph.errors import InvalidInputError, NoKeyStepsError
from taskgraph.pipeline import Pipeline, PipelineConfig, read_transcripts
from taskgraph.providers import TrigramEmbedder
from taskgraph.summarize import SummaryStepSequence


def brute_force_cliques(n, edges):
    adj = {v: set() for v in range(n)}
    for a, b in edges:
        adj[a].add(b)
        adj[b].add(a)
    cliques = []
    for mask in range(1, 2**n):
        verts = [v for v in range(n) if mask >> v & 1]
        if all(b in adj[a] for a, b in itertools.combinations(verts, 2)):
            cliques.append(set(verts))
    maximal = [c for c in cliques if not any(c < d for d in cliques)]
    return sorted(tuple(sorted(c)) for c in maximal)


def to_graph(n, edges):
    g = {v: set() for v in range(n)}
    for a, b in edges:
        g[a].add(b)
        g[b].add(a)
    return g


@st.composite
def random_graphs(draw, max_n=12):
    n = draw(st.integers(0, max_n))
    pairs = list(itertools.combinations(range(n), 2))
    p = draw(st.floats(0.0, 1.0))
    flags = draw(st.lists(st.floats(0, 1), min_size=len(pairs), max_size=len(pairs)))
    return n, [e for e, f in zip(pairs, flags) if f < p]


# --- similarity graph -------------------------------------------------------


def test_identical_sentences_are_adjacent():
    emb = TrigramEmbedder()
    g = build_similarity_graph([emb.embed("fill water"), emb.embed("fill water")], 0.9)
    assert g == {0: {1}, 1: {0}}


def test_orthogonal_embeddings_not_adjacent():
    g = build_similarity_graph([np.array([1.0, 0.0]), np.array([0.0, 1.0])], 0.0 + 1e-9)
    assert g == {0: set(), 1: set()}


def test_similarity_graph_matches_pairwise_check():
    rng = np.random.default_rng(5)
    vecs = [rng.normal(size=4) for _ in range(10)]
    for threshold in (-0.2, 0.3, 0.6):
        g = build_similarity_graph(vecs, threshold)
        for i, j in itertools.combinations(range(10), 2):
            cos = vecs[i] @ vecs[j] / (np.linalg.norm(vecs[i]) * np.linalg.norm(vecs[j]))
            assert (j in g[i]) == (cos >= threshold)


def test_mismatched_dimensions_rejected():
    with pytest.raises(InvalidInputError):
        build_similarity_graph([np.ones(2), np.ones(3)], 0.5)


# --- cliques ----------------------------------------------------------------


def test_triangle_and_path():
    assert enumerate_maximal_cliques(to_graph(3, [(0, 1), (1, 2), (0, 2)])) == [(0, 1, 2)]
    assert enumerate_maximal_cliques(to_graph(3, [(0, 1), (1, 2)])) == [(0, 1), (1, 2)]


def test_isolated_vertices_are_singleton_cliques():
    assert enumerate_maximal_cliques({0: set(), 1: set()}) == [(0,), (1,)]
    assert enumerate_maximal_cliques({}) == []


@settings(max_examples=150, deadline=None)
@given(random_graphs())
def test_cliques_match_subset_oracle(graph):
    n, edges = graph
    assert enumerate_maximal_cliques(to_graph(n, edges)) == brute_force_cliques(n, edges)


def test_clique_deeper_than_recursion_limit():
    n = 300
    g = {v: set(range(n)) - {v} for v in range(n)}
    old = sys.getrecursionlimit()
    sys.setrecursionlimit(len(inspect.stack()) + 60)
    try:
        found = enumerate_maximal_cliques(g)
    finally:
        sys.setrecursionlimit(old)
    assert found == [tuple(range(n))]


def test_retention_rule():
    cliques = [tuple(range(7)), tuple(range(10, 15)), tuple(range(20, 26))]
    assert [len(c) for c in retain_cliques(cliques, 6)] == [7, 6]
    assert retain_cliques([], 6) == []


def test_overlapping_cliques_tie_goes_to_first():
    a, b = tuple(range(0, 7)), tuple(range(4, 11))
    assert filter_cliques([a, b], 3) == [a, (7, 8, 9, 10)]
    # with the default size the remainder of b is too small to stand alone
    assert filter_cliques([a, b], 6) == [a]


def test_overlap_goes_to_larger_clique():
    small, big = tuple(range(0, 6)), tuple(range(3, 11))
    assert filter_cliques([small, big], 3) == [(0, 1, 2), big]


@settings(max_examples=100, deadline=None)
@given(random_graphs(), st.integers(2, 4))
def test_filtered_cliques_are_disjoint_and_large(graph, k):
    n, edges = graph
    out = filter_cliques(enumerate_maximal_cliques(to_graph(n, edges)), k)
    seen = set()
    for c in out:
        assert len(c) >= k
        assert not seen & set(c)
        seen |= set(c)


# --- overlap and merging ----------------------------------------------------


def members(video_ids, vec=(1.0, 0.0), sentence="s"):
    v = np.asarray(vec, dtype=float)
    v = v / np.linalg.norm(v)
    return [Member(sentence, vid, 0, v) for vid in video_ids]


def test_overlap_extremes():
    assert sequence_overlap(members(["a", "b"]), members(["c", "d"])) == 0.0
    assert sequence_overlap(members(["a", "b"]), members(["a", "b"])) == 1.0


def test_overlap_matches_set_arithmetic_on_six_videos():
    seqs = [SummaryStepSequence(f"v{i}", ["x"]) for i in range(6)]
    a = members(["v0", "v1", "v2", "v3"])
    b = members(["v2", "v3", "v4"])
    va, vb = {"v0", "v1", "v2", "v3"}, {"v2", "v3", "v4"}
    assert sequence_overlap(a, b, seqs) == len(va & vb) / min(len(va), len(vb))
    # sequences filter which videos count
    assert sequence_overlap(a, b, seqs[:3]) == 1 / 1


def unit(deg):
    r = math.radians(deg)
    return (math.cos(r), math.sin(r))


def test_four_cluster_merge_trace():
    # A=0deg, B=20deg, C=45deg, D=90deg, all in different videos
    clusters = [members([f"v{i}"], unit(d), f"c{i}") for i, d in enumerate([0, 20, 45, 90])]
    groups, trace = greedy_merge(clusters, ClusterConfig())
    # round 1: cos20=.940 is best; round 2: mean(cos45, cos25)=.807 >= .75; then ABC-D mean=.350 stops
    assert trace == [((0,), (1,)), ((0, 1), (2,))]
    assert groups == [[0, 1, 2], [3]]


def naive_merge(clusters, config):
    groups = [[i] for i in range(len(clusters))]
    trace = []
    while True:
        best = None
        for i, j in itertools.combinations(range(len(groups)), 2):
            ma = [m for g in groups[i] for m in clusters[g]]
            mb = [m for g in groups[j] for m in clusters[g]]
            sim = float(np.mean([x.embedding @ y.embedding for x in ma for y in mb]))
            va, vb = {m.video_id for m in ma}, {m.video_id for m in mb}
            ov = len(va & vb) / min(len(va), len(vb))
            if sim >= config.merge_sim_threshold and ov <= config.merge_overlap_threshold:
                if best is None or sim > best[0] + 1e-12:
                    best = (sim, i, j)
        if best is None:
            return groups, trace
        _, i, j = best
        trace.append((tuple(groups[i]), tuple(groups[j])))
        groups[i] = groups[i] + groups[j]
        del groups[j]


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 40), st.sets(st.integers(0, 9), min_size=1, max_size=3)), min_size=1, max_size=7))
def test_merge_matches_exhaustive_rescoring(spec):
    clusters = [members([f"v{v}" for v in sorted(vids)], unit(deg * 3), f"c{k}") for k, (deg, vids) in enumerate(spec)]
    config = ClusterConfig(merge_sim_threshold=0.8, merge_overlap_threshold=0.1)
    groups, trace = greedy_merge(clusters, config)
    expected_groups, expected_trace = naive_merge(clusters, config)
    assert trace == expected_trace
    assert groups == expected_groups


MOKA_TABLE = {
    "fill the moka pot with water": [1.0, 0.15, 0.0],
    "fill the bottom chamber with water": [1.0, -0.15, 0.0],
    "screw the top on": [0.0, 0.0, 1.0],
}


def _moka_sequences():
    seqs = []
    for i in range(12):
        first = "fill the moka pot with water" if i < 6 else "fill the bottom chamber with water"
        seqs.append(SummaryStepSequence(f"v{i}", [first, "screw the top on"]))
    return seqs


def test_moka_paraphrase_clusters_merge():
    # the two phrasings never share a video and a semantic encoder places them close together
    emb = DictEmbedder(MOKA_TABLE)
    keys = identify_key_steps(_moka_sequences(), emb, ClusterConfig())
    assert len(keys) == 2
    fill = next(k for k in keys if "water" in k.label)
    assert {m.sentence for m in fill.members} == {"fill the moka pot with water", "fill the bottom chamber with water"}
    assert len(fill.videos) == 12


def test_cooccurring_clusters_never_merge():
    a = members([f"v{i}" for i in range(6)], (1.0, 0.0), "a")
    b = members([f"v{i}" for i in range(6)], (1.0, 0.0), "b")
    groups, trace = greedy_merge([a, b], ClusterConfig())
    assert trace == [] and groups == [[0], [1]]


def test_repeated_sentence_gives_one_key_step():
    seqs = [SummaryStepSequence(f"v{i}", ["Grind the coffee beans"]) for i in range(6)]
    keys = identify_key_steps(seqs, TrigramEmbedder())
    assert len(keys) == 1
    assert keys[0].label == "Grind the coffee beans"
    assert len(keys[0].members) == 6


def test_min_clique_larger_than_corpus():
    seqs = [SummaryStepSequence(f"v{i}", ["Grind the coffee beans"]) for i in range(6)]
    with pytest.raises(NoKeyStepsError):
        identify_key_steps(seqs, TrigramEmbedder(), ClusterConfig(min_clique_size=7))


def test_key_step_label_must_be_member():
    with pytest.raises(InvalidInputError):
        KeyStep(1, members(["v"]), "not a member")


def test_merge_clusters_labels_medoid():
    close = members(["v1"], unit(0), "left") + members(["v2"], unit(10), "middle") + members(["v3"], unit(20), "right")
    (k,) = merge_clusters([close])
    assert k.label == "middle" and k.id == 1


def test_config_validation():
    with pytest.raises(InvalidInputError):
        ClusterConfig(sim_threshold=1.5)
    with pytest.raises(InvalidInputError):
        ClusterConfig(min_clique_size=1)


def test_bundled_corpus_golden_clusters(corpus_dir):
    config = PipelineConfig.load(corpus_dir / "config.json")
    _, transcripts = read_transcripts(config.transcripts)
    pipe = Pipeline(config, transcripts=transcripts)
    keys = pipe.cluster(pipe.summarize(transcripts))
    records = [k.to_dict() for k in keys]
    check_golden("clusters.json", jsonio.dumps(records))
    rebuilt = key_steps_from_dicts(records, TrigramEmbedder())
    assert [k.to_dict() for k in rebuilt] == records
