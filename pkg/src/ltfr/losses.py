"""Pair mining, Multi-Similarity loss and the meta-consistency regularized loss.

Labels are integer arrays aligned with the rows of the similarity matrix;
``-1`` marks an entity without a label in that relation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numerics as nx


class UnlabeledAnchorError(ValueError):
    pass


class BatchError(ValueError):
    pass


@dataclass(frozen=True)
class MiningConfig:
    delta: float = 0.1
    variant: str = "paper_min"

    def __post_init__(self):
        if not math.isfinite(self.delta):
            raise ValueError("delta must be finite")
        if self.variant not in ("paper_min", "original_max"):
            raise ValueError(f"unknown mining variant {self.variant!r}")


@dataclass(frozen=True)
class MsHyper:
    alpha: float = 2.0
    beta: float = 50.0
    gamma: float = 1.0

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise ValueError("alpha and beta must be strictly positive")


DEFAULT_MS = MsHyper(2.0, 50.0, 1.0)
DEFAULT_PRIOR = MsHyper(2.0, 40.0, 0.5)


def similarity_matrix(E):
    """Cosine similarity of L2-normalized rows (``S = E E^T``)."""
    values = E.values if hasattr(E, "values") and not isinstance(E, np.ndarray) else E
    values = np.asarray(values, dtype=np.float64)
    norms = np.linalg.norm(values, axis=1)
    if np.any(norms == 0):
        raise ValueError(f"zero-norm row(s) at {np.flatnonzero(norms == 0)[:5].tolist()}")
    return values @ values.T


def relation(Y, labeled=None):
    """``(same, labeled)`` from labels or from a boolean relation matrix.

    ``Y`` is either a label vector (``-1`` = unlabeled) or an ``(N, N)``
    boolean matrix where ``Y[i, j]`` says that ``i`` and ``j`` are related.
    For a matrix every row counts as labeled unless ``labeled`` says otherwise.
    """
    Y = np.asarray(Y)
    if Y.ndim == 1:
        lab = Y >= 0 if labeled is None else np.asarray(labeled, dtype=bool) & (Y >= 0)
        same = Y[:, None] == Y[None, :]
    else:
        if Y.shape[0] != Y.shape[1]:
            raise ValueError(f"relation matrix must be square, got {Y.shape}")
        lab = np.ones(len(Y), dtype=bool) if labeled is None else np.asarray(labeled, dtype=bool)
        same = Y.astype(bool) | np.eye(len(Y), dtype=bool)
    both = lab[:, None] & lab[None, :]
    return same & both, lab


def _candidates(Y, i, labeled=None):
    same, lab = relation(Y, labeled)
    if not lab[i]:
        raise UnlabeledAnchorError(f"anchor {i} has no label")
    n = len(lab)
    pos = same[i] & (np.arange(n) != i)
    neg = ~same[i] & lab
    return pos, neg


def mine_positive_set(S, Y, i, cfg=MiningConfig(), labeled=None):
    pos, neg = _candidates(Y, i, labeled)
    row = np.asarray(S)[i]
    if not neg.any():
        return set(np.flatnonzero(pos).tolist())
    ref = row[neg].min() if cfg.variant == "paper_min" else row[neg].max()
    return set(np.flatnonzero(pos & (row < ref + cfg.delta)).tolist())


def mine_negative_set(S, Y, i, cfg=MiningConfig(), labeled=None):
    pos, neg = _candidates(Y, i, labeled)
    row = np.asarray(S)[i]
    if not pos.any():
        return set()
    return set(np.flatnonzero(neg & (row > row[pos].min() - cfg.delta)).tolist())


def mined_masks(S, Y, cfg=MiningConfig(), labeled=None):
    """Boolean ``(N, N)`` masks of mined positives and negatives for every anchor.

    Rows of unlabeled anchors are all False.
    """
    S = np.asarray(S, dtype=np.float64)
    same, lab = relation(Y, labeled)
    n = len(lab)
    pos_c = same & ~np.eye(n, dtype=bool)
    neg_c = ~same & lab[:, None] & lab[None, :]

    inf = np.inf
    if cfg.variant == "paper_min":
        neg_ref = np.where(neg_c, S, inf).min(axis=1)
    else:
        neg_ref = np.where(neg_c, S, -inf).max(axis=1)
    has_neg = neg_c.any(axis=1)
    pos_mask = pos_c & np.where(has_neg[:, None], S < (neg_ref + cfg.delta)[:, None], True)

    pos_min = np.where(pos_c, S, inf).min(axis=1)
    has_pos = pos_c.any(axis=1)
    neg_mask = neg_c & has_pos[:, None] & (S > (pos_min - cfg.delta)[:, None])
    return pos_mask, neg_mask


def _soft_term(z, mask, scale):
    """``(1/scale) * log(1 + sum_mask exp(z))`` per row and its gradient in ``z``.

    Computed as a log-sum-exp over ``{0} U z[mask]``.
    """
    zm = np.where(mask, z, -np.inf)
    m = np.maximum(zm.max(axis=1), 0.0)
    ez = np.where(mask, np.exp(zm - m[:, None]), 0.0)
    tail = ez.sum(axis=1)
    denom = np.exp(-m) + tail
    # log1p keeps tiny terms when no shift was needed (m == 0)
    value = np.where(m > 0, m + np.log(denom), np.log1p(tail)) / scale
    grad = ez / denom[:, None] / scale
    return value, grad


def _ms_from_masks(S, pos_mask, neg_mask, hyper, n):
    S = np.asarray(S, dtype=np.float64)
    pv, pg = _soft_term(-hyper.alpha * (S - hyper.gamma), pos_mask, hyper.alpha)
    nv, ng = _soft_term(hyper.beta * (S - hyper.gamma), neg_mask, hyper.beta)
    loss = (pv.sum() + nv.sum()) / n
    # d/dS of each term: chain through -alpha and +beta
    dS = (-hyper.alpha * pg + hyper.beta * ng) / n
    if not (math.isfinite(loss) and np.all(np.isfinite(dS))):
        raise nx.NonFiniteError("Multi-Similarity loss produced a non-finite value")
    return loss, dS


def ms_loss(S, Y, hyper=DEFAULT_MS, cfg=MiningConfig(), labeled=None):
    """Mined Multi-Similarity loss averaged over all ``N`` anchors.

    ``Y`` is a label vector or a boolean relation matrix (see :func:`relation`).
    Returns ``(loss, dloss/dS)``.
    """
    S = np.asarray(S, dtype=np.float64)
    n = S.shape[0]
    if n < 2:
        raise BatchError("Multi-Similarity loss needs at least 2 rows")
    pos_mask, neg_mask = mined_masks(S, Y, cfg, labeled)
    return _ms_from_masks(S, pos_mask, neg_mask, hyper, n)


def prior_loss(S, Y_P, hyper=DEFAULT_PRIOR):
    """Multi-Similarity form over meta-consistency classes, without mining."""
    S = np.asarray(S, dtype=np.float64)
    Y_P = np.asarray(Y_P)
    n = S.shape[0]
    same = Y_P[:, None] == Y_P[None, :]
    pos = same & ~np.eye(n, dtype=bool)
    return _ms_from_masks(S, pos, ~same, hyper, n)


@dataclass(frozen=True)
class LossHypers:
    ms: MsHyper = DEFAULT_MS
    prior: MsHyper = DEFAULT_PRIOR
    mining: MiningConfig = MiningConfig()


def multi_relationship_loss(S, Y_A, Y_P, hypers=LossHypers(), lam=0.3, labeled=None):
    """Ground-truth MS loss plus ``lam`` times the prior loss.

    The MS term runs on the rows labeled in ``Y_A`` only (long-tail rows take
    part through the prior term alone); ``Y_A`` may be a label vector or a
    relation matrix with ``labeled`` marking its non-long-tail rows.
    Returns ``(loss, dS, parts)``.
    """
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    S = np.asarray(S, dtype=np.float64)
    Y_A = np.asarray(Y_A)
    n = S.shape[0]
    dS = np.zeros_like(S)
    _, lab_mask = relation(Y_A, labeled)
    lab = np.flatnonzero(lab_mask)
    ms_val = 0.0
    if len(lab) >= 2:
        sub = Y_A[lab] if Y_A.ndim == 1 else Y_A[np.ix_(lab, lab)]
        ms_val, g = ms_loss(S[np.ix_(lab, lab)], sub, hypers.ms, hypers.mining)
        dS[np.ix_(lab, lab)] += g
    pr_val = 0.0
    if lam > 0:
        pr_val, g = prior_loss(S, Y_P, hypers.prior)
        dS += lam * g
    total = ms_val + lam * pr_val
    return total, dS, {"ms": ms_val, "prior": pr_val, "n": n}


def similarity_tensor(E):
    """Tape op for ``E E^T`` over a batch of normalized embeddings."""
    return nx.matmul(E, nx.transpose(E))


def loss_on_tape(S, value, dS):
    """Attach a precomputed loss and its ``dS`` to the similarity tensor."""
    return nx.custom([S], np.array(value), [lambda g: g * dS])


# ---------------------------------------------------------------------------
# batch sampling
# ---------------------------------------------------------------------------

def _pick(rng, pool, k):
    pool = list(pool)
    if not pool:
        return []
    replace = k > len(pool)
    return [pool[i] for i in rng.choice(len(pool), size=k, replace=replace)]


def sample_batch(labels, P, Q, tail_mix=0.0, seed=0, tail_pool=None):
    """``P`` classes of ``Q`` members each plus ``ceil(tail_mix * P * Q)`` unlabeled ids.

    ``seed`` may be an int or a ``numpy.random.Generator``. Classes smaller
    than ``Q`` are sampled with replacement.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    groups = {k: sorted(v) for k, v in labels.members().items()}
    multi = sorted(k for k, v in groups.items() if len(v) >= 2)
    if not multi:
        raise BatchError("no class with at least 2 members")
    population = sum(len(groups[k]) for k in multi)
    if P * Q > population:
        raise BatchError(f"P*Q = {P * Q} exceeds the {population} members of multi-member classes")
    classes = [multi[i] for i in rng.choice(len(multi), size=P, replace=P > len(multi))]
    batch = []
    for c in classes:
        members = groups[c]
        batch += [members[i] for i in rng.choice(len(members), size=Q, replace=Q > len(members))]
    n_tail = math.ceil(tail_mix * P * Q - 1e-12)
    pool = sorted(labels.unlabeled if tail_pool is None else tail_pool)
    batch += _pick(rng, pool, n_tail)
    return batch


def sample_neighborhood_batch(graph, seeds, P, Q, tail_pool=(), tail_mix=0.0, rng=None,
                              partners=None):
    """``P`` seed entities, each with ``Q - 1`` graph neighbours, plus long-tail ids.

    With ``partners`` (id -> ids sharing its metadata tuple) the long-tail block
    alternates a long-tail id and one of its partners, so the prior term sees
    same-tuple pairs; the block size stays ``ceil(tail_mix * P * Q)``.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    seeds = list(seeds)
    if not seeds:
        raise BatchError("no linked entity to seed a batch")
    batch = []
    for s in _pick(rng, seeds, P):
        nbrs = sorted(graph.neighbors(s))
        batch.append(s)
        batch += _pick(rng, nbrs, Q - 1)
    n_tail = math.ceil(tail_mix * P * Q - 1e-12)
    if partners is None:
        return batch + _pick(rng, sorted(tail_pool), n_tail)
    block = []
    for t in _pick(rng, sorted(tail_pool), n_tail):
        if len(block) >= n_tail:
            break
        block.append(t)
        mates = partners.get(t, ())
        if mates and len(block) < n_tail:
            block += _pick(rng, mates, 1)
    return batch + block
