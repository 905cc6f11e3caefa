import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ltfr import losses as L
from ltfr import numerics as nx
from ltfr.datamodel import EntityRecord, EmbeddingMatrix, generate_synthetic, quantize
from ltfr.models import (
    CbrmConfig, CbrmModel, GrmConfig, GrmModel, MetaEmbedder, UirmConfig, UirmModel,
    UnknownIdError, aggregate_artist, cbrm_encode, config_dict, encode_catalog, feature_cross,
    grm_forward, load_checkpoint, meta_embed, model_from_checkpoint, save_checkpoint, uirm_lookup,
)

SOFT = L.LossHypers(L.MsHyper(2, 5, 0.5), L.MsHyper(2, 4, 0.2), L.MiningConfig(2.0))


def artist(eid, genre="rock", region="us", pop=1):
    return EntityRecord(eid, "artist", genre, region, pop)


def tiny_grm(seed=0):
    ents = [artist("a", "rock", "us", 0), artist("b", "jazz", "uk", 1), artist("c", "rock", "fr", 2)]
    emb = MetaEmbedder.from_entities(ents, (2, 2, 2))
    cfg = GrmConfig(content_dim=3, user_dim=3, meta_dims=(2, 2, 2), token_dim=4, heads=2,
                    fused_dim=8, fields=2, field_heads=2, hidden_dim=6, out_dim=4, seed=seed)
    return GrmModel(cfg, emb), ents


# CbRM ---------------------------------------------------------------------------

@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=5, max_size=5))
def test_cbrm_unit_norm(x):
    m = CbrmModel(CbrmConfig(5, 8, 4))
    v = cbrm_encode(m, np.array(x))
    assert abs(np.linalg.norm(v) - 1) < 1e-12


def test_cbrm_identical_inputs_and_batch_shape(rng):
    m = CbrmModel(CbrmConfig(5, 8, 4))
    x = rng.normal(size=5)
    assert np.array_equal(cbrm_encode(m, x), cbrm_encode(m, x.copy()))
    assert cbrm_encode(m, rng.normal(size=(7, 5))).shape == (7, 4)
    with pytest.raises(nx.ShapeError):
        cbrm_encode(m, np.zeros(4))


# aggregation -----------------------------------------------------------------------

def test_aggregate_examples():
    songs = [([1.0, 0.0], 5), ([0.0, 1.0], 4), ([9.0, 9.0], 1)]
    assert aggregate_artist(songs, 2).tolist() == [0.5, 0.5]
    assert aggregate_artist(songs, 1).tolist() == [1.0, 0.0]
    assert np.array_equal(aggregate_artist(songs, 10), np.mean([s[0] for s in songs], axis=0))
    with pytest.raises(ValueError):
        aggregate_artist([], 3)


def test_aggregate_popularity_ties_by_song_id():
    songs = [("s2", [2.0], 3), ("s1", [1.0], 3), ("s3", [5.0], 1)]
    assert aggregate_artist(songs, 1).tolist() == [1.0]


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 12), st.integers(1, 15), st.integers(0, 2**31 - 1))
def test_aggregate_exact_mean_of_top_songs(n, K, seed):
    rng = np.random.default_rng(seed)
    vecs = rng.normal(size=(n, 4))
    pops = rng.integers(0, 4, size=n)
    songs = [(f"s{i:02d}", vecs[i], int(pops[i])) for i in range(n)]
    order = sorted(range(n), key=lambda i: (-pops[i], f"s{i:02d}"))[:min(K, n)]
    expect = np.sum([vecs[i] for i in order], axis=0) / len(order)
    assert np.array_equal(aggregate_artist(songs, K), expect)


# UiRM ------------------------------------------------------------------------------

def test_uirm_lookup():
    m = UirmModel(UirmConfig(4), ["a", "b"])
    row = m.params.values["uirm.table"][0]
    assert np.allclose(uirm_lookup(m, "a"), row / np.linalg.norm(row))
    assert np.array_equal(uirm_lookup(m, "b"), uirm_lookup(m, "b"))
    with pytest.raises(UnknownIdError):
        uirm_lookup(m, "zz")


# metadata ----------------------------------------------------------------------------

def test_meta_embed():
    ents = [artist("a"), artist("b", "jazz")]
    emb = MetaEmbedder.from_entities(ents)
    p = nx.ParameterSet()
    emb.init_params(p, np.random.default_rng(0))
    assert emb.dim == 24
    assert meta_embed(emb, p, artist("x")).shape == (24,)
    assert np.array_equal(meta_embed(emb, p, artist("x")), meta_embed(emb, p, artist("y")))
    unseen = meta_embed(emb, p, artist("z", "polka"))
    assert np.array_equal(unseen[:8], p.values["meta.genre"][0])


# GRM -------------------------------------------------------------------------------

def test_feature_cross_examples():
    assert feature_cross([[1, 2], [3, 4]]).tolist() == [3, 8]
    assert not feature_cross(np.zeros((4, 16))).any()
    assert GrmConfig(fused_dim=64, fields=4).cross_input_dim == 80
    with pytest.raises(ValueError):
        GrmConfig(fused_dim=10, fields=4)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 6), st.integers(1, 5), st.integers(0, 2**31 - 1))
def test_feature_cross_matches_pairwise_sum(Z, F, seed):
    rng = np.random.default_rng(seed)
    E = rng.normal(size=(Z, F))
    brute = sum(E[p] * E[q] for p in range(Z) for q in range(p + 1, Z))
    assert np.allclose(feature_cross(E), brute, atol=1e-12)
    assert np.allclose(feature_cross(E[rng.permutation(Z)]), brute, atol=1e-12)


def test_grm_forward_unit_norm_and_missing_token(rng):
    m, ents = tiny_grm()
    codes = m.embedder.codes(ents[:1])[0]
    trace = {}
    out = grm_forward(m, rng.normal(size=3), rng.normal(size=3), codes, trace)
    assert abs(np.linalg.norm(out) - 1) < 1e-12
    assert trace["second_order"].shape == (1, 2 * 4 + 4)
    e_c = rng.normal(size=3)
    missing = grm_forward(m, e_c, None, codes)
    token = grm_forward(m, e_c, m.params.values["grm.missing_u"], codes)
    zero = grm_forward(m, e_c, np.zeros(3), codes)
    assert np.allclose(missing, token, atol=1e-12)
    assert not np.allclose(missing, zero)


def test_encode_catalog_shapes_and_determinism():
    b = generate_synthetic(n_artists=100, n_users=150, seed=5)
    cb = CbrmModel(CbrmConfig(b.content_dim(), 16, 8))
    ui = UirmModel(UirmConfig(8), b.ids("artist"))
    emb = MetaEmbedder.from_entities(b.entities)
    g = GrmModel(GrmConfig(content_dim=8, user_dim=8, out_dim=12), emb)
    out = encode_catalog(b, "artist", cb, ui, g)
    assert out["grm"].values.shape == (100, 12)
    again = encode_catalog(b, "artist", cb, ui, g)
    assert np.array_equal(out["grm"].values, again["grm"].values)
    music = encode_catalog(b, "music", cb, ui, g)
    assert "uirm" not in music and len(music["grm"]) == len(b.ids("music"))


# gradient checks ---------------------------------------------------------------------

def test_grm_with_multi_relationship_loss_gradcheck(rng):
    m, ents = tiny_grm()
    ec, eu = rng.normal(size=(3, 3)), rng.normal(size=(3, 3))
    has = np.array([True, False, True])
    codes = m.embedder.codes(ents)
    Y_A, Y_P = np.array([0, 0, -1]), np.array([0, 1, 0])

    def loss(p):
        E = m.forward(ec, eu, has, codes)
        S = L.similarity_tensor(E)
        val, dS, _ = L.multi_relationship_loss(S.data, Y_A, Y_P, SOFT, 0.5)
        return L.loss_on_tape(S, val, dS)

    assert nx.gradcheck(loss, m.params) < 1e-4


def test_cbrm_and_uirm_gradcheck(rng):
    cb = CbrmModel(CbrmConfig(3, 5, 4))
    X = rng.normal(size=(4, 3))
    Y = np.array([0, 0, 1, 1])

    def cb_loss(p):
        S = L.similarity_tensor(cb.forward(X))
        val, dS = L.ms_loss(S.data, Y, SOFT.ms, SOFT.mining)
        return L.loss_on_tape(S, val, dS)

    assert nx.gradcheck(cb_loss, cb.params) < 1e-4
    ui = UirmModel(UirmConfig(4), list("abcd"))

    def ui_loss(p):
        S = L.similarity_tensor(ui.forward(list("abcd")))
        val, dS = L.ms_loss(S.data, Y, SOFT.ms, SOFT.mining)
        return L.loss_on_tape(S, val, dS)

    assert nx.gradcheck(ui_loss, ui.params) < 1e-4


# checkpoints -------------------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path, rng):
    m, ents = tiny_grm(seed=3)
    E = EmbeddingMatrix(["a", "b"], rng.normal(size=(2, 4)))
    path = save_checkpoint(tmp_path / "g.ckpt", E, m.kind, config_dict(m), m.params, m.extra_state())
    E2, header, params = load_checkpoint(path)
    assert E2.ids == E.ids and np.array_equal(E2.values, quantize(E.values))
    m2 = model_from_checkpoint(header, params)
    codes = m.embedder.codes(ents)
    ec = rng.normal(size=3)
    assert np.array_equal(grm_forward(m, ec, None, codes[0]), grm_forward(m2, ec, None, codes[0]))
