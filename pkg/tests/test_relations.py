import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ltfr.datamodel import DatasetError, EntityRecord, InteractionRecord, RelationEdge
from ltfr.relations import (
    CoInteractionConfig, LabelAssignment, RelationGraph, build_content_labels,
    build_ground_truth_labels, build_meta_consistency_labels, build_user_labels,
    co_interaction_edges, components, content_graph, long_tail_flags, shared_user_counts,
)


def artist(i, genre="rock", region="US", pop=3):
    return EntityRecord(i, "artist", genre, region, pop)


def song(i, owner, pop=1):
    return EntityRecord(i, "music", "rock", "US", pop, owner)


def edges(*pairs):
    return [RelationEdge(a, b) for a, b in pairs]


def brute_components(ids, pairs):
    """Reachability closure by repeated relaxation."""
    reach = {i: {i} for i in ids}
    changed = True
    while changed:
        changed = False
        for a, b in pairs:
            if a in reach and b in reach:
                merged = reach[a] | reach[b]
                for x in merged:
                    if reach[x] != merged:
                        reach[x] = set(merged)
                        changed = True
    touched = {x for p in pairs for x in p if x in reach}
    return {i: frozenset(reach[i]) for i in touched}


def test_ground_truth_chain_and_singleton():
    ents = [artist(x) for x in "abcd"]
    lab = build_ground_truth_labels(edges(("a", "b"), ("b", "c")), ents)
    assert lab.labels == {"a": 0, "b": 0, "c": 0}
    assert lab.unlabeled == {"d"}


def test_no_edges_all_unlabeled():
    ents = [artist(x) for x in "abc"]
    lab = build_ground_truth_labels([], ents)
    assert lab.labels == {} and lab.unlabeled == {"a", "b", "c"}


def test_two_disjoint_pairs():
    ents = [artist(x) for x in "abcd"]
    lab = build_ground_truth_labels(edges(("a", "b"), ("c", "d")), ents)
    assert lab.n_labels == 2 and lab.get("a") != lab.get("c")


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 25), st.lists(st.tuples(st.integers(0, 24), st.integers(0, 24)), max_size=40))
def test_components_match_brute_force(n, raw):
    ids = [f"n{i}" for i in range(n)]
    pairs = [(f"n{a}", f"n{b}") for a, b in raw if a < n and b < n and a != b]
    labels, unlabeled = components(ids, pairs)
    oracle = brute_components(ids, pairs)
    assert set(labels) == set(oracle)
    assert set(unlabeled) == set(ids) - set(oracle)
    for x in labels:
        for y in labels:
            assert (labels[x] == labels[y]) == (y in oracle[x])
    # dense label ids
    assert set(labels.values()) == set(range(len(set(labels.values()))))


def test_content_labels_same_and_similar_artists():
    ents = [artist("a"), artist("b"), artist("c"), song("s1", "a"), song("s2", "a"),
            song("s3", "b"), song("s4", "c")]
    gt = build_ground_truth_labels(edges(("a", "b")), [e for e in ents if e.kind == "artist"])
    lab = build_content_labels(ents, gt)
    assert lab.get("s1") == lab.get("s2")
    assert lab.get("s1") == lab.get("s3")
    assert lab.get("s4") != lab.get("s1")
    assert not lab.unlabeled


def test_content_labels_missing_owner():
    ents = [artist("a"), EntityRecord("s1", "music", "rock", "US", 1, "ghost")]
    with pytest.raises(DatasetError):
        build_content_labels(ents)


def inter(*rows):
    return [InteractionRecord(u, a) for u, a in rows]


def test_threshold_mode_shared_users():
    its = inter(("u1", "i"), ("u1", "j"), ("u2", "i"), ("u2", "j"), ("u3", "i"), ("u3", "j"))
    assert shared_user_counts(its)[("i", "j")] == 3
    lab = build_user_labels(its, CoInteractionConfig("threshold", threshold=2))
    assert lab.get("i") == lab.get("j") >= 0
    lab = build_user_labels(its, CoInteractionConfig("threshold", threshold=5))
    assert lab.labels == {} and lab.unlabeled == {"i", "j"}


def test_threshold_chain_closure():
    its = inter(*[(f"u{k}", x) for k in range(2) for x in "ij"],
                *[(f"v{k}", x) for k in range(2) for x in "jk"])
    lab = build_user_labels(its, CoInteractionConfig("threshold", threshold=2))
    assert lab.get("i") == lab.get("j") == lab.get("k")


def test_top_k_is_mutual():
    # i's strongest partner is j, but j prefers k
    its = inter(("u1", "i"), ("u1", "j"), ("u2", "j"), ("u2", "k"), ("u3", "j"), ("u3", "k"))
    got = set(co_interaction_edges(its, CoInteractionConfig("top_k", k=1)))
    assert got == {("j", "k")}


def test_combined_is_union():
    its = inter(("u1", "i"), ("u1", "j"), ("u2", "j"), ("u2", "k"), ("u3", "j"), ("u3", "k"),
                ("u4", "i"), ("u4", "j"))
    a = set(co_interaction_edges(its, CoInteractionConfig("threshold", threshold=2)))
    b = set(co_interaction_edges(its, CoInteractionConfig("top_k", k=1)))
    c = set(co_interaction_edges(its, CoInteractionConfig("combined", threshold=2, k=1)))
    assert c == a | b


def test_coint_config_validation():
    with pytest.raises(ValueError):
        CoInteractionConfig("fuzzy")
    with pytest.raises(ValueError):
        CoInteractionConfig("threshold", threshold=0)
    with pytest.raises(ValueError):
        CoInteractionConfig("top_k", k=0)


def test_meta_consistency_labels():
    ents = [artist("a", "rock", "US", 3), artist("b", "rock", "US", 3),
            artist("c", "rock", "US", 2), artist("d", "jazz", "FR", 0)]
    lab = build_meta_consistency_labels(ents)
    assert lab.get("a") == lab.get("b")
    assert lab.get("a") != lab.get("c")
    assert lab.get("d") >= 0 and not lab.unlabeled


def test_meta_consistency_missing_metadata():
    with pytest.raises(DatasetError):
        build_meta_consistency_labels([artist("a", genre="")])


def test_long_tail_flags():
    ents = [artist(x) for x in "abc"]
    gt = build_ground_truth_labels(edges(("a", "b")), ents)
    assert long_tail_flags(gt) == {"c"}
    assert long_tail_flags(build_ground_truth_labels([], ents)) == {"a", "b", "c"}


def test_long_tail_fraction_on_calibrated_data():
    from ltfr.datamodel import generate_synthetic
    b = generate_synthetic(n_artists=1000, seed=1)
    arts = [b.entity(i) for i in b.ids("artist")]
    gt = build_ground_truth_labels(b.relations_of("artist"), arts)
    assert abs(len(long_tail_flags(gt)) / len(arts) - 0.3697) <= 0.03


def test_label_assignment_invariants():
    with pytest.raises(ValueError):
        LabelAssignment("A", {"a": 0}, frozenset({"a"}))
    with pytest.raises(ValueError):
        LabelAssignment("Z")
    lab = LabelAssignment("A", {"a": 0, "b": 1}, frozenset({"c"}))
    np.testing.assert_array_equal(lab.array(["a", "c", "b"]), [0, -1, 1])


def test_relation_graph_batch_relation():
    g = RelationGraph([("a", "b"), ("b", "c")])
    R = g.batch_relation(["a", "b", "c", "a"])
    expected = np.array([[1, 1, 0, 1], [1, 1, 1, 1], [0, 1, 1, 0], [1, 1, 0, 1]], dtype=bool)
    np.testing.assert_array_equal(R, expected)
    assert g.linked() == ["a", "b", "c"]


def test_relation_graph_batch_labels():
    g = RelationGraph([("a", "b"), ("c", "d")])
    np.testing.assert_array_equal(g.batch_labels(["a", "b", "c", "e", "e"]), [0, 0, -1, 1, 1])


def test_content_graph_links_owner_and_related():
    ents = [artist("a"), artist("b"), artist("c"), song("s1", "a"), song("s2", "a"),
            song("s3", "b"), song("s4", "c")]
    g = content_graph(ents, edges(("a", "b")))
    assert g.neighbors("s1") == {"s2", "s3"}
    assert g.neighbors("s4") == set()
