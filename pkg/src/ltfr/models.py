"""Content, user-interaction and general encoders.

All encoders return L2-normalized rows so cosine similarity is a dot product.
Parameters of one model live in a single :class:`~ltfr.numerics.ParameterSet`
with dotted names (``cbrm.0.W``, ``grm.enc0.q.W``, ...).
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import numerics as nx
from .datamodel import EmbeddingMatrix, EmbeddingFormatError, pack_embeddings, unpack_embeddings

META_FIELDS = ("genre", "region", "popularity")
PARAM_MAGIC = b"PARM"


class UnknownIdError(KeyError):
    pass


# ---------------------------------------------------------------------------
# CbRM
# ---------------------------------------------------------------------------

@dataclass
class CbrmConfig:
    content_dim: int = 32
    hidden_dim: int = 64
    embed_dim: int = 32
    seed: int = 0


class CbrmModel:
    """PReLU MLP from standardized content features to unit embeddings."""

    kind = "cbrm"

    def __init__(self, cfg, center=None, scale=None):
        self.cfg = cfg
        self.params = nx.ParameterSet()
        rng = np.random.default_rng(cfg.seed)
        nx.init_mlp(self.params, "cbrm", [cfg.content_dim, cfg.hidden_dim, cfg.embed_dim], rng)
        # a nonzero output bias keeps an all-zero (standardized) input normalizable
        self.params.values["cbrm.1.b"] += rng.normal(scale=0.01, size=cfg.embed_dim)
        self.center = np.zeros(cfg.content_dim) if center is None else np.asarray(center, float)
        self.scale = np.ones(cfg.content_dim) if scale is None else np.asarray(scale, float)

    @property
    def embed_dim(self):
        return self.cfg.embed_dim

    def fit_standardizer(self, X):
        X = np.asarray(X, dtype=np.float64)
        self.center = X.mean(axis=0)
        sd = X.std(axis=0)
        self.scale = np.where(sd > 0, sd, 1.0)

    def forward(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[-1] != self.cfg.content_dim:
            raise nx.ShapeError(f"content dim {X.shape[-1]} != {self.cfg.content_dim}")
        h = nx.mlp_forward(self.params, (X - self.center) / self.scale, "cbrm")
        return nx.l2_normalize(h)

    def extra_state(self):
        return {"center": self.center.tolist(), "scale": self.scale.tolist()}


def cbrm_encode(model, content):
    """Unit embedding(s) for one content vector or a batch of them."""
    content = np.asarray(content, dtype=np.float64)
    out = model.forward(content).data
    model.params.discard_graph()
    return out[0] if content.ndim == 1 else out


def aggregate_artist(songs, K):
    """Mean embedding of the ``min(K, n)`` most popular songs.

    ``songs`` holds ``(embedding, popularity)`` or ``(song_id, embedding,
    popularity)`` entries; equal popularity is broken by ascending song id
    (list position when ids are absent).
    """
    songs = list(songs)
    if not songs:
        raise ValueError("cannot aggregate an artist with no songs")
    if K < 1:
        raise ValueError("K must be >= 1")
    keyed = []
    for pos, s in enumerate(songs):
        if len(s) == 3:
            sid, vec, pop = s
        else:
            (vec, pop), sid = s, pos
        keyed.append((-pop, sid, np.asarray(vec, dtype=np.float64)))
    keyed.sort(key=lambda t: (t[0], t[1]))
    top = [v for _, _, v in keyed[:min(K, len(keyed))]]
    return np.sum(top, axis=0) / len(top)


# ---------------------------------------------------------------------------
# UiRM
# ---------------------------------------------------------------------------

@dataclass
class UirmConfig:
    embed_dim: int = 32
    seed: int = 0


class UirmModel:
    """One trainable row per artist, initialized from an interaction SVD."""

    kind = "uirm"

    def __init__(self, cfg, ids, init=None, observed=None):
        self.cfg = cfg
        self.ids = list(ids)
        self.row = {i: k for k, i in enumerate(self.ids)}
        rng = np.random.default_rng(cfg.seed)
        table = rng.normal(scale=0.1, size=(len(self.ids), cfg.embed_dim))
        if init is not None:
            table = table * 0.1 + init
        self.params = nx.ParameterSet()
        self.params.add("uirm.table", table)
        self.observed = set(self.ids) if observed is None else set(observed)

    @property
    def embed_dim(self):
        return self.cfg.embed_dim

    def forward(self, ids):
        try:
            rows = [self.row[i] for i in ids]
        except KeyError as exc:
            raise UnknownIdError(f"unknown artist id {exc.args[0]!r}") from None
        return nx.l2_normalize(nx.index(self.params.leaf("uirm.table"), np.array(rows)))

    def extra_state(self):
        return {"ids": self.ids, "observed": sorted(self.observed)}


def interaction_svd(interactions, ids, dim, seed=0):
    """Item factors ``V * sqrt(s)`` of the log-weighted user x artist matrix."""
    row = {i: k for k, i in enumerate(ids)}
    users = sorted({it.user_id for it in interactions})
    urow = {u: k for k, u in enumerate(users)}
    M = np.zeros((len(users), len(ids)))
    for it in interactions:
        if it.artist_id in row:
            M[urow[it.user_id], row[it.artist_id]] += np.log1p(it.weight)
    out = np.zeros((len(ids), dim))
    if M.size == 0:
        return out
    _, s, vt = np.linalg.svd(M, full_matrices=False)
    r = min(dim, len(s))
    # fix SVD sign ambiguity for reproducibility across LAPACK builds
    signs = np.sign(vt[:r].sum(axis=1))
    signs[signs == 0] = 1.0
    out[:, :r] = (vt[:r].T * signs) * np.sqrt(s[:r])
    norm = np.linalg.norm(out, axis=1, keepdims=True)
    return np.where(norm > 0, out / np.maximum(norm, 1e-300), 0.0)


def uirm_lookup(model, artist_id):
    if artist_id not in model.row:
        raise UnknownIdError(f"unknown artist id {artist_id!r}")
    out = model.forward([artist_id]).data[0]
    model.params.discard_graph()
    return out


# ---------------------------------------------------------------------------
# metadata embedding
# ---------------------------------------------------------------------------

class MetaEmbedder:
    """Per-field lookup tables; slot 0 of each table is the out-of-vocabulary row."""

    def __init__(self, vocab, dims=(8, 8, 8)):
        self.vocab = {f: list(vocab[f]) for f in META_FIELDS}
        self.dims = tuple(dims)
        self.index = {f: {v: k + 1 for k, v in enumerate(self.vocab[f])} for f in META_FIELDS}

    @classmethod
    def from_entities(cls, entities, dims=(8, 8, 8)):
        vocab = {f: sorted({getattr(e, f) for e in entities}, key=str) for f in META_FIELDS}
        return cls(vocab, dims)

    @property
    def dim(self):
        return sum(self.dims)

    def init_params(self, params, rng, prefix="meta"):
        for f, d in zip(META_FIELDS, self.dims):
            params.add(f"{prefix}.{f}", rng.normal(scale=0.1, size=(len(self.vocab[f]) + 1, d)))

    def codes(self, entities):
        return np.array([[self.index[f].get(getattr(e, f), 0) for f in META_FIELDS]
                         for e in entities], dtype=int).reshape(-1, len(META_FIELDS))

    def forward(self, params, codes, prefix="meta"):
        parts = [nx.index(params.leaf(f"{prefix}.{f}"), codes[:, k]) for k, f in enumerate(META_FIELDS)]
        return nx.concat(parts, axis=-1)

    def state(self):
        return {"vocab": self.vocab, "dims": list(self.dims)}


def meta_embed(embedder, params, entity, prefix="meta"):
    out = embedder.forward(params, embedder.codes([entity]), prefix).data[0]
    params.discard_graph()
    return out


# ---------------------------------------------------------------------------
# GRM
# ---------------------------------------------------------------------------

@dataclass
class GrmConfig:
    content_dim: int = 32
    user_dim: int = 32
    meta_dims: tuple = (8, 8, 8)
    token_dim: int = 32
    heads: int = 2
    fused_dim: int = 64
    fields: int = 4
    field_heads: int = 2
    hidden_dim: int = 64
    out_dim: int = 64
    seed: int = 0

    def __post_init__(self):
        self.meta_dims = tuple(self.meta_dims)
        if self.fused_dim % self.fields:
            raise ValueError(f"fused_dim {self.fused_dim} is not fields * field_dim for fields={self.fields}")
        if self.out_dim < 1:
            raise ValueError("out_dim must be positive")

    @property
    def field_dim(self):
        return self.fused_dim // self.fields

    @property
    def cross_input_dim(self):
        return self.fields * self.field_dim + self.field_dim

    def token_layer(self):
        return nx.AttentionLayerConfig(self.token_dim, self.heads, 2 * self.token_dim)

    def field_layer(self):
        return nx.AttentionLayerConfig(self.field_dim, self.field_heads, 2 * self.field_dim)


def feature_cross(fields):
    """Sum over field pairs ``p < q`` of ``E_p * E_q`` (fields on axis -2)."""
    fields = np.asarray(fields, dtype=np.float64)
    s = fields.sum(axis=-2)
    return 0.5 * (s * s - (fields * fields).sum(axis=-2))


def feature_cross_tensor(fields):
    s = nx.tsum(fields, axis=-2)
    sq = nx.tsum(nx.mul(fields, fields), axis=-2)
    return nx.mul(nx.add(nx.mul(s, s), nx.neg(sq)), 0.5)


class GrmModel:
    """Fusion encoder over (content, interaction, metadata) tokens, field attention,
    second-order crossing and a PReLU output MLP."""

    kind = "grm"

    def __init__(self, cfg, embedder):
        self.cfg = cfg
        self.embedder = embedder
        if tuple(embedder.dims) != cfg.meta_dims:
            raise ValueError(f"embedder dims {embedder.dims} != config {cfg.meta_dims}")
        rng = np.random.default_rng(cfg.seed)
        p = self.params = nx.ParameterSet()
        embedder.init_params(p, rng)
        nx.init_linear(p, "grm.tok_c", cfg.content_dim, cfg.token_dim, rng)
        nx.init_linear(p, "grm.tok_u", cfg.user_dim, cfg.token_dim, rng)
        nx.init_linear(p, "grm.tok_m", embedder.dim, cfg.token_dim, rng)
        p.add("grm.missing_u", rng.normal(scale=0.1, size=cfg.user_dim))
        for k in range(2):
            nx.init_attention_layer(p, f"grm.enc{k}", cfg.token_layer(), rng)
        nx.init_linear(p, "grm.fuse", 3 * cfg.token_dim, cfg.fused_dim, rng)
        nx.init_attention_layer(p, "grm.field", cfg.field_layer(), rng)
        nx.init_mlp(p, "grm.out", [cfg.cross_input_dim, cfg.hidden_dim, cfg.out_dim], rng)

    @property
    def embed_dim(self):
        return self.cfg.out_dim

    def forward(self, e_c, e_u, has_u, codes, trace=None):
        """Batch forward; ``e_u`` rows where ``has_u`` is False are replaced by the
        learned missing token. ``trace`` (a dict) receives intermediate arrays."""
        cfg, p = self.cfg, self.params
        e_c = np.atleast_2d(np.asarray(e_c, dtype=np.float64))
        B = e_c.shape[0]
        if e_c.shape[1] != cfg.content_dim:
            raise nx.ShapeError(f"content embedding dim {e_c.shape[1]} != {cfg.content_dim}")
        has_u = np.asarray(has_u, dtype=bool).reshape(B)
        e_u = np.zeros((B, cfg.user_dim)) if e_u is None else np.atleast_2d(np.asarray(e_u, float))
        if e_u.shape != (B, cfg.user_dim):
            raise nx.ShapeError(f"user embedding shape {e_u.shape} != {(B, cfg.user_dim)}")
        keep = has_u[:, None].astype(float)
        u = nx.add(np.where(has_u[:, None], e_u, 0.0),
                   nx.mul(p.leaf("grm.missing_u"), 1.0 - keep))
        m = self.embedder.forward(p, np.asarray(codes, dtype=int).reshape(B, -1))

        tokens = [nx.linear(p, "grm.tok_c", nx.as_tensor(e_c)),
                  nx.linear(p, "grm.tok_u", u),
                  nx.linear(p, "grm.tok_m", m)]
        x = nx.concat([nx.reshape(t, (B, 1, cfg.token_dim)) for t in tokens], axis=1)
        for k in range(2):
            x = nx.attention_layer_forward(p, cfg.token_layer(), x, f"grm.enc{k}")
        fused = nx.linear(p, "grm.fuse", nx.reshape(x, (B, 3 * cfg.token_dim)))
        fields = nx.reshape(fused, (B, cfg.fields, cfg.field_dim))
        fields, weights = nx.attention_layer_forward(p, cfg.field_layer(), fields, "grm.field",
                                                     return_weights=True)
        cross = feature_cross_tensor(fields)
        second = nx.concat([nx.reshape(fields, (B, cfg.fields * cfg.field_dim)), cross], axis=-1)
        out = nx.l2_normalize(nx.mlp_forward(p, second, "grm.out"))
        if trace is not None:
            trace.update(fused=fused.data, fields=fields.data, field_attention=weights,
                         cross=cross.data, second_order=second.data)
        return out

    def extra_state(self):
        return {"embedder": self.embedder.state()}


def grm_forward(model, e_c, e_u, e_m_codes, trace=None):
    """Single-entity E_G; ``e_u=None`` selects the missing-interaction token."""
    has = e_u is not None
    out = model.forward(np.asarray(e_c)[None], None if not has else np.asarray(e_u)[None],
                        [has], np.asarray(e_m_codes)[None], trace=trace).data[0]
    model.params.discard_graph()
    return out


# ---------------------------------------------------------------------------
# catalog encoding
# ---------------------------------------------------------------------------

def song_embeddings(cbrm, bundle):
    songs = [e for e in bundle.entities if e.kind == "music"]
    if not songs:
        return EmbeddingMatrix([], np.zeros((0, cbrm.embed_dim)))
    X = np.stack([e.content_feature for e in songs])
    return EmbeddingMatrix([e.id for e in songs], cbrm_encode(cbrm, X))


def artist_content_embeddings(song_emb, bundle, K=5):
    """Artist E_C by aggregating each artist's top-K popular songs."""
    songs = bundle.songs_by_artist()
    ids, rows = [], []
    for aid in bundle.ids("artist"):
        lst = songs.get(aid, [])
        if not lst:
            raise ValueError(f"artist {aid!r} has no songs to aggregate")
        rows.append(aggregate_artist([(s.id, song_emb.row(s.id), s.popularity) for s in lst], K))
        ids.append(aid)
    return EmbeddingMatrix(ids, np.array(rows).reshape(len(ids), song_emb.dim))


def content_inputs(bundle, cbrm, kind, K=5):
    song_emb = song_embeddings(cbrm, bundle)
    if kind == "music":
        return song_emb
    return artist_content_embeddings(song_emb, bundle, K)


def grm_inputs(model, bundle, ids, e_c, uirm=None):
    """Aligned (E_C rows, E_U rows, has_u, meta codes) for ``ids``."""
    ec = np.stack([e_c.row(i) for i in ids]) if ids else np.zeros((0, model.cfg.content_dim))
    eu = np.zeros((len(ids), model.cfg.user_dim))
    has = np.zeros(len(ids), dtype=bool)
    if uirm is not None:
        for k, i in enumerate(ids):
            if i in uirm and i in getattr(uirm, "observed_ids", uirm.ids):
                eu[k] = uirm.row(i)
                has[k] = True
    codes = model.embedder.codes([bundle.entity(i) for i in ids])
    return ec, eu, has, codes


def encode_grm(model, bundle, ids, e_c, uirm=None, batch=512):
    rows = []
    for lo in range(0, len(ids), batch):
        chunk = ids[lo:lo + batch]
        ec, eu, has, codes = grm_inputs(model, bundle, chunk, e_c, uirm)
        rows.append(model.forward(ec, eu, has, codes).data)
        model.params.discard_graph()
    values = np.concatenate(rows) if rows else np.zeros((0, model.embed_dim))
    return EmbeddingMatrix(list(ids), values)


class UserEmbeddings(EmbeddingMatrix):
    """E_U rows plus the set of artists that actually have interactions."""

    def __init__(self, ids, values, observed_ids=()):
        super().__init__(ids, values)
        self.observed_ids = set(observed_ids)


def encode_uirm(model):
    out = model.forward(model.ids).data
    model.params.discard_graph()
    return UserEmbeddings(model.ids, out, model.observed)


def encode_catalog(bundle, kind="artist", cbrm=None, uirm=None, grm=None, K=5):
    """Embedding matrices of every entity of ``kind`` for each provided model."""
    out = {}
    e_c = None
    if cbrm is not None:
        e_c = content_inputs(bundle, cbrm, kind, K)
        out["cbrm"] = e_c
    e_u = None
    if uirm is not None and kind == "artist":
        e_u = encode_uirm(uirm)
        out["uirm"] = e_u
    if grm is not None:
        if e_c is None:
            raise ValueError("GRM encoding needs content embeddings (a CbRM model)")
        out["grm"] = encode_grm(grm, bundle, bundle.ids(kind), e_c, e_u)
    return out


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path, embeddings, model_kind, config, params, extra=None):
    """Embedding container followed by a ``PARM`` block of float64 parameters.

    ``PARM``, u32 JSON length, JSON header ``{"kind", "config", "extra",
    "params": [[name, shape], ...]}``, then each parameter as little-endian
    float64 in header order.
    """
    names = list(params.values)
    header = {"kind": model_kind, "config": config, "extra": extra or {},
              "step": params.step,
              "params": [[n, list(params.values[n].shape)] for n in names]}
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [pack_embeddings(embeddings), PARAM_MAGIC, struct.pack("<I", len(blob)), blob]
    parts += [np.ascontiguousarray(params.values[n], dtype="<f8").tobytes() for n in names]
    Path(path).write_bytes(b"".join(parts))
    return Path(path)


def load_checkpoint(path):
    """Returns ``(embeddings, header, ParameterSet)``."""
    buf = Path(path).read_bytes()
    emb, pos = unpack_embeddings(buf)
    if buf[pos:pos + 4] != PARAM_MAGIC:
        raise EmbeddingFormatError("not a checkpoint: parameter block missing")
    if len(buf) < pos + 8:
        raise EmbeddingFormatError("truncated file: parameter header incomplete")
    (n,) = struct.unpack_from("<I", buf, pos + 4)
    pos += 8
    header = json.loads(buf[pos:pos + n].decode("utf-8"))
    pos += n
    params = nx.ParameterSet()
    for name, shape in header["params"]:
        count = int(np.prod(shape)) if shape else 1
        if len(buf) < pos + 8 * count:
            raise EmbeddingFormatError(f"truncated file: parameter {name!r} incomplete")
        arr = np.frombuffer(buf, dtype="<f8", count=count, offset=pos).reshape(shape)
        params.add(name, arr.astype(np.float64))
        pos += 8 * count
    params.step = header.get("step", 0)
    return emb, header, params


def model_from_checkpoint(header, params):
    kind, cfg, extra = header["kind"], header["config"], header["extra"]
    if kind == "cbrm":
        model = CbrmModel(CbrmConfig(**cfg), extra["center"], extra["scale"])
    elif kind == "uirm":
        model = UirmModel(UirmConfig(**cfg), extra["ids"], observed=extra["observed"])
    elif kind == "grm":
        st = extra["embedder"]
        model = GrmModel(GrmConfig(**cfg), MetaEmbedder(st["vocab"], st["dims"]))
    else:
        raise EmbeddingFormatError(f"unknown model kind {kind!r}")
    missing = set(model.params.values) ^ set(params.values)
    if missing:
        raise EmbeddingFormatError(f"checkpoint parameters do not match model: {sorted(missing)[:5]}")
    model.params = params
    return model


def config_dict(model):
    cfg = asdict(model.cfg)
    if "meta_dims" in cfg:
        cfg["meta_dims"] = list(cfg["meta_dims"])
    return cfg

