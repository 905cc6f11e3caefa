"""Stage-wise training (CbRM, then UiRM, then GRM) and the ablation runner."""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import losses as L
from . import numerics as nx
from .datamodel import write_embeddings
from .evaluation import NoScorableQueryError, evaluate
from .models import (
    CbrmConfig, CbrmModel, GrmConfig, GrmModel, MetaEmbedder, UirmConfig, UirmModel,
    config_dict, content_inputs, encode_grm, encode_uirm, grm_inputs,
    interaction_svd, save_checkpoint,
)
from .relations import (
    CoInteractionConfig, RelationGraph, build_meta_consistency_labels, co_interaction_edges,
    content_graph,
)

STAGES = ("cbrm", "uirm", "grm")


class MissingUpstreamError(RuntimeError):
    pass


class DivergenceError(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    stage: str = "grm"
    kind: str = "artist"
    epochs: int = 20
    steps_per_epoch: int = 0          # 0: one pass over the batch seeds
    P: int = 8
    Q: int = 4
    tail_mix: float = 0.25
    delta: float = 0.1
    variant: str = "paper_min"
    alpha: float = 2.0
    beta: float = 50.0
    gamma: float = 1.0
    prior_alpha: float = 2.0
    prior_beta: float = 40.0
    prior_gamma: float = 0.5
    lam: float = 0.3
    lr: float = 1e-3
    lr_schedule: str = "cosine"       # or "constant"
    seed: int = 0
    val_every: int = 1
    val_k: int = 10
    songs_per_artist: int = 5
    coint_mode: str = "threshold"
    coint_threshold: int = 3
    coint_k: int = 5
    embed_dim: int = 32
    hidden_dim: int = 64
    token_dim: int = 32
    heads: int = 2
    fused_dim: int = 64
    fields: int = 4
    field_heads: int = 2
    out_dim: int = 64
    meta_dims: tuple = (8, 8, 8)

    def __post_init__(self):
        self.meta_dims = tuple(self.meta_dims)
        if self.stage not in STAGES:
            raise ValueError(f"unknown stage {self.stage!r}")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown lr schedule {self.lr_schedule!r}")
        if self.kind not in ("artist", "music"):
            raise ValueError(f"unknown task kind {self.kind!r}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.P < 1 or self.Q < 2:
            raise ValueError("batches need P >= 1 and Q >= 2")

    def hypers(self):
        return L.LossHypers(L.MsHyper(self.alpha, self.beta, self.gamma),
                            L.MsHyper(self.prior_alpha, self.prior_beta, self.prior_gamma),
                            L.MiningConfig(self.delta, self.variant))

    def to_dict(self):
        d = asdict(self)
        d["meta_dims"] = list(self.meta_dims)
        return d


@dataclass
class TrainLog:
    steps: list = field(default_factory=list)
    validations: list = field(default_factory=list)
    wall_clock: float = 0.0
    best: dict = field(default_factory=dict)

    def losses(self):
        return [s["loss"] for s in self.steps]

    def write_jsonl(self, path):
        with Path(path).open("w", encoding="utf-8") as fh:
            for rec in self.steps:
                fh.write(json.dumps({"type": "step", **rec}, sort_keys=True) + "\n")
            for rec in self.validations:
                fh.write(json.dumps({"type": "validation", **rec}, sort_keys=True) + "\n")
            fh.write(json.dumps({"type": "summary", "best": self.best,
                                 "wall_clock": self.wall_clock}, sort_keys=True) + "\n")


@dataclass
class StageResult:
    model: object
    log: TrainLog
    embeddings: object = None


class _Guard:
    """Abort on non-finite loss, or loss above 10x its initial value for 100 steps.

    The initial value is the mean of the first ``warmup`` losses; a single
    mined batch can have an empty pair set and a loss of exactly zero.
    """

    def __init__(self, factor=10.0, patience=100, warmup=10):
        self.first = None
        self.seen = []
        self.factor, self.patience, self.warmup, self.run = factor, patience, warmup, 0

    def check(self, loss, step):
        if not math.isfinite(loss):
            raise DivergenceError(f"non-finite loss at step {step}")
        if self.first is None:
            self.seen.append(loss)
            if len(self.seen) >= self.warmup:
                self.first = float(np.mean(self.seen))
            return
        if self.first > 0 and loss > self.factor * self.first:
            self.run += 1
            if self.run >= self.patience:
                raise DivergenceError(f"loss above {self.factor}x its initial value for {self.run} steps")
        else:
            self.run = 0


def _loop(cfg, params, n_seeds, batch_fn, step_fn, validate_fn, log):
    """Shared optimisation loop; keeps the parameters of the best validation score
    (the later epoch on ties)."""
    rng = np.random.default_rng(cfg.seed)
    hyper = nx.AdamHyper(lr=cfg.lr)
    guard = _Guard()
    steps = cfg.steps_per_epoch or max(1, math.ceil(n_seeds / cfg.P))
    total = steps * cfg.epochs
    best_score, best_params = -math.inf, params.copy()
    step = 0
    for epoch in range(cfg.epochs):
        for _ in range(steps):
            hyper.lr = _lr_at(cfg, step, total)
            batch = batch_fn(rng)
            params.zero_grad()
            out, parts = step_fn(batch)
            guard.check(float(out.data), step)
            nx.backward(params, out)
            nx.optimizer_step(params, hyper)
            log.steps.append({"step": step, "epoch": epoch, "loss": float(out.data), **parts})
            step += 1
        if (epoch + 1) % cfg.val_every == 0 or epoch == cfg.epochs - 1:
            score, info = validate_fn()
            log.validations.append({"epoch": epoch, "step": step, "score": score, **info})
            if score >= best_score:
                best_score, best_params = score, params.copy()
                log.best = {"epoch": epoch, "score": score, **info}
    return best_params


def _lr_at(cfg, step, total):
    if cfg.lr_schedule == "constant":
        return cfg.lr
    # half-cosine from lr down to 0 over the whole run
    return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * step / total))


def _val_hr(E, bundle, cfg):
    try:
        rep = evaluate(E, bundle, ks=(cfg.val_k,), kind=cfg.kind, split="val")
    except NoScorableQueryError:
        return 0.0, {}
    key = f"HR@{cfg.val_k}"
    val = rep.metrics["all"].get(key, 0.0)
    return val, {key: val}


def _train_graph(bundle, kind):
    train = set(bundle.ids(kind, split="train"))
    return RelationGraph.from_relations(bundle.relations_of(kind), keep=train), train


def train_cbrm(cfg, bundle):
    songs = [e for e in bundle.entities if e.kind == "music"]
    if not songs or songs[0].content_feature is None:
        raise MissingUpstreamError("CbRM needs music entities with content features")
    train_artists = set(bundle.ids("artist", split="train"))
    art_rel = [r for r in bundle.relations_of("artist")
               if r.src in train_artists and r.dst in train_artists]
    train_songs = [s for s in songs if bundle.split.get(s.id, "train") == "train"]
    graph = content_graph(train_songs, art_rel)
    if cfg.kind == "music":
        train_ids = {s.id for s in train_songs}
        for r in bundle.relations_of("music"):
            if r.src in train_ids and r.dst in train_ids:
                graph.adj[r.src].add(r.dst)
                graph.adj[r.dst].add(r.src)
    seeds = graph.linked()
    content = {s.id: s.content_feature for s in songs}

    model = CbrmModel(CbrmConfig(len(songs[0].content_feature), cfg.hidden_dim, cfg.embed_dim, cfg.seed))
    model.fit_standardizer(np.stack([content[s.id] for s in train_songs]))
    hypers = cfg.hypers()

    def batch_fn(rng):
        return L.sample_neighborhood_batch(graph, seeds, cfg.P, cfg.Q, rng=rng)

    def step_fn(batch):
        E = model.forward(np.stack([content[i] for i in batch]))
        S = L.similarity_tensor(E)
        R = graph.batch_relation(batch)
        val, dS, parts = L.multi_relationship_loss(S.data, R, np.zeros(len(batch), int), hypers, 0.0)
        return L.loss_on_tape(S, val, dS), {"ms": parts["ms"]}

    def validate_fn():
        return _val_hr(content_inputs(bundle, model, cfg.kind, cfg.songs_per_artist), bundle, cfg)

    log = TrainLog()
    t0 = time.perf_counter()
    model.params = _loop(cfg, model.params, len(seeds), batch_fn, step_fn, validate_fn, log)
    log.wall_clock = time.perf_counter() - t0
    return StageResult(model, log, content_inputs(bundle, model, cfg.kind, cfg.songs_per_artist))


def train_uirm(cfg, bundle):
    if cfg.kind != "artist":
        raise MissingUpstreamError("UiRM needs user-artist interactions; the music task has none")
    ids = bundle.ids("artist")
    observed = sorted({it.artist_id for it in bundle.interactions})
    if not observed:
        raise MissingUpstreamError("no interactions to train UiRM")
    coint = CoInteractionConfig(cfg.coint_mode, cfg.coint_threshold, cfg.coint_k)
    graph = RelationGraph(co_interaction_edges(bundle.interactions, coint))
    seeds = graph.linked()
    init = interaction_svd(bundle.interactions, ids, cfg.embed_dim, cfg.seed)
    model = UirmModel(UirmConfig(cfg.embed_dim, cfg.seed), ids, init=init, observed=observed)
    hypers = cfg.hypers()
    val_rng = np.random.default_rng(cfg.seed + 7919)
    val_batches = [L.sample_neighborhood_batch(graph, seeds, cfg.P, cfg.Q, rng=val_rng)
                   for _ in range(8)] if seeds else []

    def loss_of(batch):
        E = model.forward(batch)
        S = L.similarity_tensor(E)
        val, dS, parts = L.multi_relationship_loss(
            S.data, graph.batch_relation(batch), np.zeros(len(batch), int), hypers, 0.0)
        return L.loss_on_tape(S, val, dS), {"ms": parts["ms"]}

    def validate_fn():
        total = 0.0
        for b in val_batches:
            out, _ = loss_of(b)
            total += float(out.data)
        model.params.discard_graph()
        mean = total / max(len(val_batches), 1)
        return -mean, {"val_loss": mean}

    log = TrainLog()
    t0 = time.perf_counter()
    if seeds:
        model.params = _loop(cfg, model.params, len(seeds),
                             lambda rng: L.sample_neighborhood_batch(graph, seeds, cfg.P, cfg.Q, rng=rng),
                             loss_of, validate_fn, log)
    log.wall_clock = time.perf_counter() - t0
    return StageResult(model, log, encode_uirm(model))


def train_grm(cfg, bundle, e_c, e_u=None):
    if e_c is None:
        raise MissingUpstreamError("GRM needs content embeddings E_C from a trained CbRM")
    ids = bundle.ids(cfg.kind)
    missing = [i for i in ids if i not in e_c]
    if missing:
        raise MissingUpstreamError(f"E_C lacks {len(missing)} id(s), e.g. {missing[:3]}")
    if cfg.kind == "music":
        e_u = None
    graph, train = _train_graph(bundle, cfg.kind)
    seeds = graph.linked()
    tail_pool = sorted(i for i in train if not graph.neighbors(i))
    meta = build_meta_consistency_labels([bundle.entity(i) for i in ids])
    by_tuple = {}
    for i in sorted(train):
        by_tuple.setdefault(meta.labels[i], []).append(i)
    partners = {t: [j for j in by_tuple[meta.labels[t]] if j != t] for t in tail_pool}

    embedder = MetaEmbedder.from_entities([bundle.entity(i) for i in ids], cfg.meta_dims)
    gcfg = GrmConfig(content_dim=e_c.dim, user_dim=e_u.dim if e_u is not None else cfg.embed_dim,
                     meta_dims=cfg.meta_dims, token_dim=cfg.token_dim, heads=cfg.heads,
                     fused_dim=cfg.fused_dim, fields=cfg.fields, field_heads=cfg.field_heads,
                     hidden_dim=cfg.hidden_dim, out_dim=cfg.out_dim, seed=cfg.seed)
    model = GrmModel(gcfg, embedder)
    hypers = cfg.hypers()

    def batch_fn(rng):
        return L.sample_neighborhood_batch(graph, seeds, cfg.P, cfg.Q, tail_pool, cfg.tail_mix, rng,
                                           partners if cfg.lam > 0 else None)

    def step_fn(batch):
        ec, eu, has, codes = grm_inputs(model, bundle, batch, e_c, e_u)
        E = model.forward(ec, eu, has, codes)
        S = L.similarity_tensor(E)
        R = graph.batch_relation(batch)
        linked = np.array([bool(graph.neighbors(i)) for i in batch])
        y_p = meta.array(batch)
        val, dS, parts = L.multi_relationship_loss(S.data, R, y_p, hypers, cfg.lam, linked)
        return L.loss_on_tape(S, val, dS), {"ms": parts["ms"], "prior": parts["prior"]}

    def validate_fn():
        return _val_hr(encode_grm(model, bundle, ids, e_c, e_u), bundle, cfg)

    log = TrainLog()
    t0 = time.perf_counter()
    model.params = _loop(cfg, model.params, len(seeds), batch_fn, step_fn, validate_fn, log)
    log.wall_clock = time.perf_counter() - t0
    return StageResult(model, log, encode_grm(model, bundle, ids, e_c, e_u))


def train_stage(cfg, bundle, upstream=None):
    """Train one stage. ``upstream`` maps ``"cbrm"``/``"uirm"`` to embedding matrices."""
    upstream = upstream or {}
    if cfg.stage == "cbrm":
        return train_cbrm(cfg, bundle)
    if cfg.stage == "uirm":
        return train_uirm(cfg, bundle)
    return train_grm(cfg, bundle, upstream.get("cbrm"), upstream.get("uirm"))


def save_stage(result, cfg, out_dir):
    """Write ``<stage>.ckpt``, ``<stage>.emb`` and ``<stage>.log.jsonl`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = result.model
    save_checkpoint(out / f"{cfg.stage}.ckpt", result.embeddings, model.kind,
                    config_dict(model), model.params, model.extra_state())
    write_embeddings(result.embeddings, out / f"{cfg.stage}.emb")
    result.log.write_jsonl(out / f"{cfg.stage}.log.jsonl")
    return out


# ---------------------------------------------------------------------------
# pipeline and ablations
# ---------------------------------------------------------------------------

@dataclass
class Variant:
    name: str
    model: str = "grm"                 # cbrm | uirm | grm
    overrides: dict = field(default_factory=dict)
    use_uirm: bool = True


def run_pipeline(bundle, base, variants, ks=(10,), strict=False):
    """Train shared upstream stages once, then every variant; evaluate each on test.

    Returns ``{variant name: EvalReport}``.
    """
    ucfg = replace(base, stage="cbrm")
    cb = train_cbrm(ucfg, bundle)
    ui = None
    if base.kind == "artist" and bundle.interactions and any(
            v.model == "uirm" or (v.model == "grm" and v.use_uirm) for v in variants):
        ui = train_uirm(replace(base, stage="uirm"), bundle)
    reports = {}
    for v in variants:
        if v.model == "cbrm":
            E = cb.embeddings
        elif v.model == "uirm":
            E = ui.embeddings
        else:
            cfg = replace(base, stage="grm", **v.overrides)
            E = train_grm(cfg, bundle, cb.embeddings,
                          ui.embeddings if (ui is not None and v.use_uirm) else None).embeddings
        reports[v.name] = evaluate(E, bundle, ks, kind=base.kind, strict=strict)
    return reports


def run_ablation(bundle, base, variants, ks=(10,), strict=False):
    """Comparison table rows ``[(variant name, EvalReport)]`` with identical seeds."""
    for v in variants:
        unknown = set(v.overrides) - set(TrainConfig.__dataclass_fields__)
        if unknown:
            raise ValueError(f"variant {v.name!r} overrides unknown fields {sorted(unknown)}")
    reports = run_pipeline(bundle, base, variants, ks, strict)
    return [(v.name, reports[v.name]) for v in variants]


def format_table(rows):
    names = []
    for _, rep in rows:
        for seg in ("all", "long_tail"):
            for n in rep.metrics.get(seg, {}):
                key = n if seg == "all" else f"{n} (tail)"
                if key not in names:
                    names.append(key)
    width = max(len(n) for n in names)
    label = max(len(r[0]) for r in rows)
    lines = [" " * label + "  " + "  ".join(f"{n:>{width}}" for n in names)]
    for name, rep in rows:
        cells = []
        for n in names:
            seg, key = ("long_tail", n[:-7]) if n.endswith(" (tail)") else ("all", n)
            v = rep.metrics.get(seg, {}).get(key)
            cells.append(f"{v:>{width}.4f}" if v is not None else f"{'-':>{width}}")
        lines.append(f"{name:<{label}}  " + "  ".join(cells))
    return "\n".join(lines)

