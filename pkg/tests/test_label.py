import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import DictEmbedder
from taskgraph.cluster import KeyStep, Member
from taskgraph.errors import InvalidInputError
from taskgraph.label import (
    KeyStepSequence,
    LabeledStep,
    alignment_matrices,
    greedy_alignment,
    label_all,
    label_sequence,
    step_cluster_similarity,
)
from taskgraph.summarize import SummaryStepSequence


def rescan_alignment(c):
    """Reference: repeatedly take the global maximum, record it, zero its row and column."""
    c = np.array(c, dtype=float)
    pairs = []
    while c.size and c.max() > 0:
        i, j = np.unravel_index(np.argmax(c), c.shape)
        pairs.append((int(i), int(j)))
        c[i, :] = 0
        c[:, j] = 0
    return sorted(pairs)


def key_step(kid, vectors, sentences=None):
    sentences = sentences or [f"k{kid}m{i}" for i in range(len(vectors))]
    members = [Member(s, f"v{i}", 0, np.asarray(v, float) / np.linalg.norm(v)) for i, (s, v) in enumerate(zip(sentences, vectors))]
    return KeyStep(kid, members, sentences[0])


def test_identical_member_scores_one():
    k = key_step(1, [[1, 0], [0, 1]], ["a", "b"])
    score, sentence = step_cluster_similarity(np.array([0.0, 2.0]), k)
    assert score == pytest.approx(1.0) and sentence == "b"


def test_orthogonal_members_score_zero():
    k = key_step(1, [[1, 0, 0], [0, 1, 0]])
    assert step_cluster_similarity(np.array([0.0, 0.0, 1.0]), k)[0] == 0.0


def test_similarity_equals_member_loop():
    rng = np.random.default_rng(3)
    for _ in range(20):
        vecs = rng.normal(size=(5, 6))
        g = rng.normal(size=6)
        k = key_step(1, vecs)
        best = max(float(v @ g / (np.linalg.norm(v) * np.linalg.norm(g))) for v in vecs)
        assert step_cluster_similarity(g, k)[0] == pytest.approx(best, abs=1e-12)


def test_two_by_two_worked_case():
    # step 0 likes A (0.9) and B (0.8); step 1 only likes A (0.85): A goes to step 0, step 1 is left out
    c = np.array([[0.9, 0.8], [0.85, -0.1]])
    assert greedy_alignment(c) == [(0, 0)]
    assert rescan_alignment(c) == [(0, 0)]


def test_all_negative_gives_nothing():
    assert greedy_alignment(-np.ones((3, 4))) == []
    assert greedy_alignment(np.zeros((2, 2))) == []


@settings(max_examples=200, deadline=None)
@given(
    st.integers(1, 10).flatmap(
        lambda n: st.integers(1, 10).flatmap(
            lambda k: st.lists(
                st.lists(st.sampled_from([-0.5, -0.1, 0.0, 0.1, 0.3, 0.5, 0.7, 0.9, 1.0]) | st.floats(-1, 1), min_size=k, max_size=k),
                min_size=n,
                max_size=n,
            )
        )
    )
)
def test_greedy_alignment_matches_rescan(rows):
    c = np.array(rows)
    assert greedy_alignment(c) == rescan_alignment(c)


def test_label_two_exact_matches_in_order():
    table = {"grind": [1, 0, 0], "fill": [0, 1, 0], "G": [1, 0, 0], "F": [0, 1, 0]}
    emb = DictEmbedder(table)
    ks = [key_step(1, [table["F"]], ["F"]), key_step(2, [table["G"]], ["G"])]
    h = label_sequence(SummaryStepSequence("v", ["grind", "fill"]), ks, emb)
    assert h.step_ids == [2, 1]
    assert [it.source_position for it in h.items] == [0, 1]
    assert [it.matched_sentence for it in h.items] == ["G", "F"]


def test_label_all_negative_gives_empty_sequence():
    ks = [key_step(1, [[1, 0]])]
    h = label_sequence(SummaryStepSequence("v", ["x"]), ks, step_vectors=[np.array([-1.0, 0.0])])
    assert len(h) == 0


def test_label_all_embeds_each_sentence_once():
    emb = DictEmbedder({"a": [1, 0], "b": [0, 1]})
    ks = [key_step(1, [[1, 0]]), key_step(2, [[0, 1]])]
    seqs = [SummaryStepSequence(f"v{i}", ["a", "b"]) for i in range(5)]
    out = label_all(seqs, ks, emb)
    assert [h.step_ids for h in out] == [[1, 2]] * 5
    assert emb.calls == 2


def test_alignment_matrices_shapes():
    ks = [key_step(1, [[1, 0]]), key_step(2, [[0, 1], [1, 1]])]
    c, h = alignment_matrices([np.array([1.0, 0.0])], ks)
    assert c.shape == (1, 2)
    assert h[0][1] == "k2m1"


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10), st.integers(1, 10), st.integers(0, 2**32 - 1))
def test_labeled_sequence_invariants(n_steps, n_keys, seed):
    rng = np.random.default_rng(seed)
    ks = [key_step(j + 1, rng.normal(size=(int(rng.integers(1, 4)), 5))) for j in range(n_keys)]
    vecs = list(rng.normal(size=(n_steps, 5)))
    g = SummaryStepSequence("v", [f"s{i}" for i in range(n_steps)])
    h = label_sequence(g, ks, step_vectors=vecs)
    ids = h.step_ids
    assert len(set(ids)) == len(ids)
    pos = [it.source_position for it in h.items]
    assert pos == sorted(pos) and len(set(pos)) == len(pos)
    # loop guard: every accepted match had a strictly positive similarity
    c, _ = alignment_matrices(vecs, ks) if vecs else (np.zeros((0, n_keys)), None)
    for it in h.items:
        assert c[it.source_position, it.key_step_id - 1] > 0


def test_sequence_rejects_repeats_and_disorder():
    with pytest.raises(InvalidInputError):
        KeyStepSequence("v", [LabeledStep(1, "a", 0), LabeledStep(1, "a", 1)])
    with pytest.raises(InvalidInputError):
        KeyStepSequence("v", [LabeledStep(1, "a", 2), LabeledStep(2, "b", 1)])


def test_sequence_roundtrip():
    h = KeyStepSequence.from_ids("v", [3, 1, 2], {1: "one"})
    assert KeyStepSequence.from_dict(h.to_dict()) == h
    assert h.items[1].matched_sentence == "one"


def test_label_needs_vectors_or_embedder():
    with pytest.raises(InvalidInputError):
        label_sequence(SummaryStepSequence("v", ["a"]), [key_step(1, [[1, 0]])])
