"""Exact top-K retrieval and HR@K / MAP / NDCG@K / Consistent@K.

Reports are segmented into all queries and long-tail queries (entities with
no ground-truth relation). Relevance metrics are only defined for queries
that have at least one relevant candidate.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .models import META_FIELDS

REPORT_SCHEMA_VERSION = 1


class NoScorableQueryError(ValueError):
    pass


class CoverageError(KeyError):
    def __init__(self, missing):
        self.missing = list(missing)
        super().__init__(f"embeddings missing {len(self.missing)} id(s): {', '.join(self.missing[:20])}")


@dataclass
class RankedList:
    query: str
    ids: list
    scores: np.ndarray

    def __len__(self):
        return len(self.ids)


def _unit(values):
    values = np.asarray(values, dtype=np.float64)
    norm = np.linalg.norm(values, axis=-1, keepdims=True)
    return values / np.where(norm > 0, norm, 1.0)


def _order(scores, ids):
    # descending score, ascending id on ties
    return np.lexsort((np.asarray(ids), -scores))


def topk_retrieve(E, query, K=None, candidates=None):
    """Highest-cosine candidates for ``query`` (the query itself excluded)."""
    if query not in E:
        raise KeyError(f"unknown query id {query!r}")
    if K is not None and K < 1:
        raise ValueError("K must be >= 1")
    cand = [c for c in (E.ids if candidates is None else candidates) if c != query]
    q = _unit(E.row(query))
    C = _unit(np.stack([E.row(c) for c in cand])) if cand else np.zeros((0, E.dim))
    scores = C @ q
    order = _order(scores, cand)
    if K is not None:
        order = order[:K]
    return RankedList(query, [cand[i] for i in order], scores[order])


def rank_all(E, ids, K=None):
    """Ranked lists for every id in ``ids`` against the others in ``ids``."""
    ids = list(ids)
    X = _unit(np.stack([E.row(i) for i in ids])) if ids else np.zeros((0, E.dim))
    S = X @ X.T
    id_arr = np.asarray(ids)
    out = []
    for q in range(len(ids)):
        keep = np.arange(len(ids)) != q
        sc, cand = S[q, keep], id_arr[keep]
        order = _order(sc, cand)
        if K is not None:
            order = order[:K]
        out.append(RankedList(ids[q], cand[order].tolist(), sc[order]))
    return out


def _scored(ranked, relevance):
    lists = [r for r in ranked if relevance.get(r.query)]
    if not lists:
        raise NoScorableQueryError("no query has a relevant candidate")
    return lists


def hit_ratio_at_k(ranked, relevance, K):
    lists = _scored(ranked, relevance)
    return float(np.mean([any(c in relevance[r.query] for c in r.ids[:K]) for r in lists]))


def average_precision(ids, relevant):
    hits, total = 0, 0.0
    for rank, c in enumerate(ids, start=1):
        if c in relevant:
            hits += 1
            total += hits / rank
    return total / len(relevant) if relevant else 0.0


def map_metric(ranked, relevance):
    lists = _scored(ranked, relevance)
    return float(np.mean([average_precision(r.ids, relevance[r.query]) for r in lists]))


def ndcg_at_k(ids, relevant, K):
    dcg = sum(1.0 / math.log2(rank + 1) for rank, c in enumerate(ids[:K], start=1) if c in relevant)
    ideal = sum(1.0 / math.log2(rank + 1) for rank in range(1, min(K, len(relevant)) + 1))
    return dcg / ideal if ideal > 0 else 0.0


def ndcg_metric(ranked, relevance, K):
    lists = _scored(ranked, relevance)
    return float(np.mean([ndcg_at_k(r.ids, relevance[r.query], K) for r in lists]))


def meta_match(a, b, strict=False):
    same = sum(getattr(a, f) == getattr(b, f) for f in META_FIELDS)
    if strict:
        return float(same == len(META_FIELDS))
    return same / len(META_FIELDS)


def consistent_at_k(ranked, entities, K, queries=None, strict=False):
    """Mean share of metadata fields a query has in common with its top-K.

    ``entities`` maps id to record. ``strict`` counts only full-tuple matches.
    """
    keep = None if queries is None else set(queries)
    per_query = []
    for r in ranked:
        if keep is not None and r.query not in keep:
            continue
        try:
            q = entities[r.query]
            top = [entities[c] for c in r.ids[:K]]
        except KeyError as exc:
            raise KeyError(f"missing metadata for {exc.args[0]!r}") from None
        if top:
            per_query.append(np.mean([meta_match(q, c, strict) for c in top]))
    if not per_query:
        raise NoScorableQueryError("no query to score for Consistent@K")
    return float(np.mean(per_query))


def chance_consistency(records, strict=False):
    """Expected Consistent@K of a uniformly random ranking over ``records``."""
    recs = list(records)
    n = len(recs)
    if n < 2:
        return 0.0
    total = 0.0
    for i, a in enumerate(recs):
        total += np.mean([meta_match(a, b, strict) for j, b in enumerate(recs) if j != i])
    return total / n


@dataclass
class EvalReport:
    ks: list
    metrics: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)
    strict: bool = False

    def value(self, segment, name):
        return self.metrics[segment][name]

    def to_dict(self):
        return {"schema_version": REPORT_SCHEMA_VERSION, "ks": list(self.ks),
                "consistent_strict": self.strict,
                "counts": dict(self.counts),
                "metrics": {s: dict(m) for s, m in self.metrics.items()}}

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), sort_keys=True, **kw)

    @classmethod
    def from_dict(cls, d):
        return cls(list(d["ks"]), {s: dict(m) for s, m in d["metrics"].items()},
                   dict(d["counts"]), d.get("consistent_strict", False))

    def to_table(self):
        names = []
        for seg in self.metrics.values():
            for n in seg:
                if n not in names:
                    names.append(n)
        width = max([len(n) for n in names] + [9])
        lines = [f"{'segment':<10} {'queries':>7}  " + "  ".join(f"{n:>{width}}" for n in names)]
        for seg, vals in self.metrics.items():
            cells = [f"{vals[n]:>{width}.4f}" if n in vals else f"{'-':>{width}}" for n in names]
            lines.append(f"{seg:<10} {self.counts.get(seg, 0):>7}  " + "  ".join(cells))
        return "\n".join(lines)


def relevance_sets(relations, candidates):
    cand = set(candidates)
    rel = {}
    for r in relations:
        if r.src in cand and r.dst in cand:
            rel.setdefault(r.src, set()).add(r.dst)
            rel.setdefault(r.dst, set()).add(r.src)
    return rel


def evaluate(E, bundle, ks=(10,), kind="artist", split="test", strict=False, ids=None):
    """All four metrics over one split; Consistent@K also on long-tail queries."""
    ids = list(bundle.ids(kind, split=split) if ids is None else ids)
    missing = [i for i in ids if i not in E]
    if missing:
        raise CoverageError(missing)
    ks = sorted(set(int(k) for k in ks))
    relations = bundle.relations_of(kind)
    linked = {x for r in relations for x in (r.src, r.dst)}
    tail = [i for i in ids if i not in linked]
    relevance = relevance_sets(relations, ids)
    ranked = rank_all(E, ids)
    entities = {i: bundle.entity(i) for i in ids}

    report = EvalReport(ks, strict=strict)
    report.counts = {"all": len(ids), "head": len(ids) - len(tail), "long_tail": len(tail),
                     "scored": sum(1 for i in ids if relevance.get(i))}
    allm, tailm = {}, {}
    for k in ks:
        if report.counts["scored"]:
            allm[f"HR@{k}"] = hit_ratio_at_k(ranked, relevance, k)
            allm[f"NDCG@{k}"] = ndcg_metric(ranked, relevance, k)
        allm[f"Consistent@{k}"] = consistent_at_k(ranked, entities, k, strict=strict)
        if tail:
            tailm[f"Consistent@{k}"] = consistent_at_k(ranked, entities, k, tail, strict)
    if report.counts["scored"]:
        allm["MAP"] = map_metric(ranked, relevance)
    report.metrics = {"all": allm, "long_tail": tailm}
    return report
