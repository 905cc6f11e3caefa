"""Pseudo-class label systems built from pairwise relations.

Each label system is the set of connected components of a relation graph;
entities with no edge in that graph stay unlabeled.
"""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .datamodel import DatasetError

RELATION_KINDS = ("C", "U", "A", "P")


@dataclass
class LabelAssignment:
    kind: str
    labels: dict = field(default_factory=dict)
    unlabeled: frozenset = frozenset()

    def __post_init__(self):
        if self.kind not in RELATION_KINDS:
            raise ValueError(f"unknown relation kind {self.kind!r}")
        overlap = set(self.labels) & set(self.unlabeled)
        if overlap:
            raise ValueError(f"entities both labeled and unlabeled: {sorted(overlap)[:5]}")

    @property
    def n_labels(self):
        return len(set(self.labels.values()))

    def get(self, eid, default=-1):
        return self.labels.get(eid, default)

    def array(self, ids):
        """Label ids for ``ids``, with -1 for unlabeled entities."""
        return np.array([self.labels.get(i, -1) for i in ids], dtype=int)

    def members(self):
        groups = defaultdict(list)
        for eid, lab in self.labels.items():
            groups[lab].append(eid)
        return dict(groups)


@dataclass
class CoInteractionConfig:
    mode: str = "threshold"
    threshold: int = 3
    k: int = 5

    def __post_init__(self):
        if self.mode not in ("threshold", "top_k", "combined"):
            raise ValueError(f"unknown co-interaction mode {self.mode!r}")
        if self.mode in ("threshold", "combined") and self.threshold < 1:
            raise ValueError("threshold must be >= 1")
        if self.mode in ("top_k", "combined") and self.k < 1:
            raise ValueError("k must be >= 1")


def components(ids, edges):
    """Dense component labels for nodes touched by ``edges``; others unlabeled.

    Labels are numbered in order of each component's first member in ``ids``.
    """
    ids = list(ids)
    pos = {x: i for i, x in enumerate(ids)}
    pairs = [(pos[a], pos[b]) for a, b in edges if a in pos and b in pos and a != b]
    n = len(ids)
    if not pairs:
        return {}, frozenset(ids)
    src, dst = np.array(pairs).T
    graph = coo_matrix((np.ones(len(src)), (src, dst)), shape=(n, n))
    _, comp = connected_components(graph, directed=False)
    touched = np.zeros(n, dtype=bool)
    touched[src] = touched[dst] = True
    remap, labels = {}, {}
    for i in range(n):
        if touched[i]:
            labels[ids[i]] = remap.setdefault(comp[i], len(remap))
    return labels, frozenset(ids[i] for i in range(n) if not touched[i])


def build_ground_truth_labels(relations, entities, kind=None):
    ids = [e.id if hasattr(e, "id") else e for e in entities]
    if kind is not None:
        ids = [e.id for e in entities if e.kind == kind]
    labels, unlabeled = components(ids, [(r.src, r.dst) for r in relations])
    return LabelAssignment("A", labels, unlabeled)


def build_content_labels(entities, ground_truth=None):
    """Songs share a label when their owners are equal or linked by ``ground_truth``."""
    by_id = {e.id: e for e in entities}
    songs = [e for e in entities if e.kind == "music"]
    edges = []
    first_song = {}
    for s in songs:
        if not s.owner_artist_id or s.owner_artist_id not in by_id:
            raise DatasetError(f"music {s.id!r} has missing owner {s.owner_artist_id!r}")
        first_song.setdefault(s.owner_artist_id, s.id)
        edges.append((s.id, first_song[s.owner_artist_id]))
    if ground_truth is not None:
        for members in ground_truth.members().values():
            anchors = [first_song[a] for a in members if a in first_song]
            edges += list(zip(anchors[:-1], anchors[1:]))
    ids = [s.id for s in songs]
    labels, _ = components(ids, edges)
    # songs of an artist without siblings or similar artists form their own class
    for sid in ids:
        if sid not in labels:
            labels[sid] = len(set(labels.values()))
    return LabelAssignment("C", labels, frozenset())


def shared_user_counts(interactions):
    """``{(i, j): count}`` of distinct users shared by item pairs, ``i < j``."""
    users = defaultdict(set)
    for it in interactions:
        users[it.user_id].add(it.artist_id)
    counts = Counter()
    for items in users.values():
        counts.update(combinations(sorted(items), 2))
    return counts


def co_interaction_edges(interactions, cfg):
    counts = shared_user_counts(interactions)
    edges = set()
    if cfg.mode in ("threshold", "combined"):
        edges |= {pair for pair, c in counts.items() if c >= cfg.threshold}
    if cfg.mode in ("top_k", "combined"):
        nbrs = defaultdict(list)
        for (i, j), c in counts.items():
            nbrs[i].append((-c, j))
            nbrs[j].append((-c, i))
        top = {i: {j for _, j in sorted(lst)[:cfg.k]} for i, lst in nbrs.items()}
        edges |= {(i, j) for (i, j) in counts if j in top[i] and i in top[j]}
    return sorted(edges)


def build_user_labels(interactions, cfg=None, items=None):
    cfg = cfg or CoInteractionConfig()
    if items is None:
        items = sorted({it.artist_id for it in interactions})
    labels, unlabeled = components(items, co_interaction_edges(interactions, cfg))
    return LabelAssignment("U", labels, unlabeled)


def build_meta_consistency_labels(entities):
    labels, classes = {}, {}
    for e in entities:
        if e.genre in (None, "") or e.region in (None, "") or e.popularity is None:
            raise DatasetError(f"entity {e.id!r} has incomplete metadata")
        labels[e.id] = classes.setdefault(e.meta, len(classes))
    return LabelAssignment("P", labels, frozenset())


def long_tail_flags(ground_truth):
    return set(ground_truth.unlabeled)


class RelationGraph:
    """Adjacency sets of one relation; batch labels come from induced components."""

    def __init__(self, edges=()):
        self.adj = defaultdict(set)
        for a, b in edges:
            if a != b:
                self.adj[a].add(b)
                self.adj[b].add(a)

    @classmethod
    def from_relations(cls, relations, keep=None):
        return cls((r.src, r.dst) for r in relations
                   if keep is None or (r.src in keep and r.dst in keep))

    def neighbors(self, x):
        return self.adj.get(x, set())

    def linked(self):
        return sorted(x for x, n in self.adj.items() if n)

    def edges_within(self, ids):
        members = set(ids)
        return [(a, b) for a in members for b in self.adj.get(a, ()) if b in members and a < b]

    def batch_relation(self, ids):
        """Boolean ``(N, N)`` matrix: same entity or directly linked."""
        ids = list(ids)
        R = np.zeros((len(ids), len(ids)), dtype=bool)
        for a, x in enumerate(ids):
            nb = self.adj.get(x, ())
            for b, y in enumerate(ids):
                R[a, b] = x == y or y in nb
        return R

    def batch_labels(self, ids):
        """Component labels of the subgraph induced by ``ids`` (-1 when isolated).

        Duplicated ids share a label.
        """
        uniq = list(dict.fromkeys(ids))
        labels, _ = components(uniq, self.edges_within(uniq))
        nxt = len(set(labels.values()))
        out = []
        for i in ids:
            out.append(labels.get(i, -1))
        # duplicates of an otherwise isolated id still form a class
        counts = Counter(ids)
        fresh = {}
        for k, i in enumerate(ids):
            if out[k] == -1 and counts[i] > 1:
                out[k] = fresh.setdefault(i, nxt + len(fresh))
        return np.array(out, dtype=int)


def content_graph(entities, relations):
    """Song graph: same owner, or owners linked by a ground-truth relation."""
    songs = defaultdict(list)
    for e in entities:
        if e.kind == "music":
            songs[e.owner_artist_id].append(e.id)
    edges = []
    for lst in songs.values():
        edges += list(combinations(lst, 2))
    for r in relations:
        for a in songs.get(r.src, ()):
            for b in songs.get(r.dst, ()):
                edges.append((a, b))
    return RelationGraph(edges)
