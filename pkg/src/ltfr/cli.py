"""``ltfr`` command line: generate, train, eval, recommend.

Exit codes: 0 ok, 2 invalid flags or config, 3 I/O or dataset failure,
4 missing upstream artifact, 5 training diverged, 6 embeddings miss
evaluation ids, 7 unknown query id.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields, replace
from pathlib import Path

from . import numerics as nx
from .datamodel import (
    DatasetError, EmbeddingFormatError, InfeasibleTargetError, SyntheticConfig,
    generate_synthetic, load_dataset, read_embeddings, split_dataset, write_dataset,
)
from .evaluation import CoverageError, NoScorableQueryError, evaluate, topk_retrieve
from .models import UserEmbeddings, load_checkpoint
from .trainer import DivergenceError, MissingUpstreamError, TrainConfig, save_stage, train_stage

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_UPSTREAM = 4
EXIT_DIVERGED = 5
EXIT_COVERAGE = 6
EXIT_UNKNOWN_ID = 7

DEFAULT_SPLIT = (0.8, 0.1, 0.1)

# config file sections and the keys each one accepts
SECTIONS = {
    "data": {"dir": None, "entities": None, "content": None, "interactions": None,
             "relations": None},
    "model": {"embed_dim": 32, "hidden_dim": 64, "token_dim": 32, "heads": 2, "fused_dim": 64,
              "fields": 4, "field_heads": 2, "out_dim": 64, "meta_dims": [8, 8, 8],
              "songs_per_artist": 5},
    "mining": {"delta": 0.1, "variant": "paper_min"},
    "loss": {"alpha": 2.0, "beta": 50.0, "gamma": 1.0, "prior_alpha": 2.0, "prior_beta": 40.0,
             "prior_gamma": 0.5, "lam": 0.3},
    "trainer": {"kind": "artist", "epochs": 20, "steps_per_epoch": 0, "P": 8, "Q": 4,
                "tail_mix": 0.25, "lr": 1e-3, "lr_schedule": "cosine", "seed": 0, "val_every": 1, "val_k": 10,
                "coint_mode": "threshold", "coint_threshold": 3, "coint_k": 5},
    "eval": {"ks": [10], "strict": False},
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def load_config(path):
    """Read a JSON config file; returns ``{section: {key: value}}`` with defaults filled in."""
    cfg = {s: dict(keys) for s, keys in SECTIONS.items()}
    if path is None:
        return cfg
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path}: invalid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise UsageError(f"config {path}: top level must be an object")
    for section, values in raw.items():
        if section not in SECTIONS:
            raise UsageError(f"config {path}: unknown section {section!r}")
        if not isinstance(values, dict):
            raise UsageError(f"config {path}: section {section!r} must be an object")
        unknown = set(values) - set(SECTIONS[section])
        if unknown:
            raise UsageError(f"config {path}: unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")
        cfg[section].update(values)
    return cfg


def train_config(cfg, stage, overrides=None):
    values = {}
    for section in ("model", "mining", "loss", "trainer"):
        values.update(cfg[section])
    values.pop("dir", None)
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    known = {f.name for f in fields(TrainConfig)}
    try:
        return TrainConfig(stage=stage, **{k: v for k, v in values.items() if k in known})
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid training config: {exc}") from None


def parse_ks(text):
    try:
        ks = [int(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"--k expects comma-separated integers, got {text!r}") from None
    if not ks or min(ks) < 1:
        raise UsageError("--k values must be >= 1")
    return ks


def _dataset(args, cfg):
    data = cfg["data"]
    base = args.data if getattr(args, "data", None) else data["dir"]
    if base is None and data["entities"] is None:
        raise UsageError("no dataset given (use --data or the data section of --config)")
    bundle = load_dataset(base, entities=data["entities"], content=data["content"],
                          interactions=data["interactions"], relations=data["relations"])
    if not bundle.split:
        bundle = split_dataset(bundle, DEFAULT_SPLIT, seed=0)
    return bundle


def _embeddings(path):
    path = Path(path)
    if path.suffix == ".ckpt":
        emb, _, _ = load_checkpoint(path)
        return emb
    return read_embeddings(path)


def _upstream(out_dir, kind):
    out = Path(out_dir)
    ec_path = out / "cbrm.emb"
    if not ec_path.exists():
        raise MissingUpstreamError(f"missing upstream content embeddings {ec_path} (train --stage cbrm first)")
    up = {"cbrm": read_embeddings(ec_path)}
    if kind == "artist":
        ckpt = out / "uirm.ckpt"
        if ckpt.exists():
            emb, header, _ = load_checkpoint(ckpt)
            up["uirm"] = UserEmbeddings(emb.ids, emb.values, header["extra"].get("observed", emb.ids))
        elif (out / "uirm.emb").exists():
            emb = read_embeddings(out / "uirm.emb")
            up["uirm"] = UserEmbeddings(emb.ids, emb.values, emb.ids)
    return up


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_generate(args):
    if not 0 <= args.long_tail_frac < 1:
        raise UsageError(f"--long-tail-frac must lie in [0, 1), got {args.long_tail_frac}")
    if args.n_artists < 2:
        raise UsageError(f"--n-artists must be >= 2, got {args.n_artists}")
    overrides = {"n_artists": args.n_artists, "long_tail_target": args.long_tail_frac,
                 "seed": args.seed}
    if args.n_users is not None:
        overrides["n_users"] = args.n_users
    try:
        bundle = generate_synthetic(SyntheticConfig(**overrides))
    except (InfeasibleTargetError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    write_dataset(bundle, args.out)
    n = len(bundle.ids("artist"))
    tail = len(bundle.long_tail_candidates("artist"))
    print(f"wrote {args.out}: {n} artists, {len(bundle.ids('music'))} songs, "
          f"{len(bundle.relations)} relations, long-tail fraction {tail / n:.4f}")
    return EXIT_OK


def cmd_train(args):
    cfg = load_config(args.config)
    tc = train_config(cfg, args.stage, {"epochs": args.epochs, "seed": args.seed,
                                        "lam": args.lam, "kind": args.kind})
    upstream = _upstream(args.out, tc.kind) if tc.stage == "grm" else {}
    bundle = _dataset(args, cfg)
    result = train_stage(tc, bundle, upstream)
    save_stage(result, tc, args.out)
    losses = result.log.losses()
    final = losses[-1] if losses else float("nan")
    best = result.log.best.get("epoch", "-")
    print(f"stage={tc.stage} kind={tc.kind} steps={len(losses)} final_loss={final:.10g} "
          f"best_epoch={best} out={args.out}")
    return EXIT_OK


def cmd_eval(args):
    cfg = load_config(args.config)
    ks = parse_ks(args.k) if args.k is not None else [int(k) for k in cfg["eval"]["ks"]]
    strict = args.strict or bool(cfg["eval"]["strict"])
    kind = args.kind or cfg["trainer"]["kind"]
    E = _embeddings(args.embeddings)
    bundle = _dataset(args, cfg)
    report = evaluate(E, bundle, ks, kind=kind, strict=strict)
    print(report.to_table())
    out = Path(args.report) if args.report else Path(args.embeddings).with_suffix(".report.json")
    out.write_text(report.to_json(indent=2) + "\n", encoding="utf-8")
    print(f"report written to {out}")
    return EXIT_OK


def cmd_recommend(args):
    if args.k < 1:
        raise UsageError("--k must be >= 1")
    E = _embeddings(args.embeddings)
    if args.query not in E:
        print(f"error: unknown id {args.query!r}", file=sys.stderr)
        return EXIT_UNKNOWN_ID
    ranked = topk_retrieve(E, args.query, args.k)
    for rank, (eid, score) in enumerate(zip(ranked.ids, ranked.scores), start=1):
        print(f"{rank},{eid},{score:.6f}")
    return EXIT_OK


def build_parser():
    p = _Parser(prog="ltfr", description="Artist and song similarity embeddings that cover long-tail entities.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write a synthetic long-tail dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--n-artists", type=int, default=1000)
    g.add_argument("--long-tail-frac", type=float, default=SyntheticConfig.long_tail_target)
    g.add_argument("--n-users", type=int, default=None)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train one stage and write its checkpoint")
    t.add_argument("--stage", required=True, choices=("cbrm", "uirm", "grm"))
    t.add_argument("--config")
    t.add_argument("--data")
    t.add_argument("--out", required=True)
    t.add_argument("--epochs", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--lam", type=float)
    t.add_argument("--kind", choices=("artist", "music"))
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate an embedding file on the test split")
    e.add_argument("--embeddings", required=True)
    e.add_argument("--config")
    e.add_argument("--data")
    e.add_argument("--k")
    e.add_argument("--kind", choices=("artist", "music"))
    e.add_argument("--strict", action="store_true", help="Consistent@K counts full-tuple matches only")
    e.add_argument("--report", help="JSON report path (default: next to the embeddings)")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("recommend", help="print the top-K most similar ids")
    r.add_argument("--embeddings", required=True)
    r.add_argument("--query", required=True)
    r.add_argument("--k", type=int, default=10)
    r.set_defaults(func=cmd_recommend)
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except MissingUpstreamError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UPSTREAM
    except (DivergenceError, nx.NonFiniteError) as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except CoverageError as exc:
        print(f"error: embeddings do not cover {len(exc.missing)} evaluation id(s):", file=sys.stderr)
        for eid in exc.missing:
            print(eid, file=sys.stderr)
        return EXIT_COVERAGE
    except NoScorableQueryError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_COVERAGE
    except (OSError, DatasetError, EmbeddingFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
