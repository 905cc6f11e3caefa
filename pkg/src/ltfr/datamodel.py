"""Entity catalog, CSV ingestion, splitting and the embedding container."""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

KINDS = ("artist", "music")
N_POPULARITY = 5
SPLITS = ("train", "val", "test")
MAGIC = b"LTFR"
FORMAT_VERSION = 1


class DatasetError(ValueError):
    """Raised for malformed or inconsistent dataset files."""


class EmbeddingFormatError(ValueError):
    pass


@dataclass(frozen=True)
class EntityRecord:
    id: str
    kind: str
    genre: str
    region: str
    popularity: int
    owner_artist_id: str | None = None
    content_feature: np.ndarray | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DatasetError(f"{self.id}: unknown kind {self.kind!r}")
        if not 0 <= self.popularity < N_POPULARITY:
            raise DatasetError(f"{self.id}: popularity {self.popularity} outside 0..{N_POPULARITY - 1}")
        if self.kind == "music" and not self.owner_artist_id:
            raise DatasetError(f"{self.id}: music entity without owner_artist_id")
        if self.kind == "artist" and self.owner_artist_id:
            raise DatasetError(f"{self.id}: artist entity cannot have an owner")

    @property
    def meta(self):
        return (self.genre, self.region, self.popularity)


@dataclass(frozen=True)
class InteractionRecord:
    user_id: str
    artist_id: str
    weight: float = 1.0


@dataclass(frozen=True)
class RelationEdge:
    src: str
    dst: str
    kind: str = "ground_truth_similar"


@dataclass(frozen=True)
class DatasetBundle:
    """Immutable dataset; ``split`` maps entity id to train/val/test."""

    entities: tuple
    interactions: tuple = ()
    relations: tuple = ()
    split: dict = field(default_factory=dict, compare=False)
    cross_split: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "_by_id", {e.id: e for e in self.entities})

    def entity(self, eid):
        return self._by_id[eid]

    def __contains__(self, eid):
        return eid in self._by_id

    def ids(self, kind=None, split=None):
        out = [e.id for e in self.entities if kind is None or e.kind == kind]
        if split is not None:
            out = [i for i in out if self.split.get(i) == split]
        return out

    def relations_of(self, kind):
        return [r for r in self.relations if self._by_id[r.src].kind == kind]

    def songs_by_artist(self):
        songs = {}
        for e in self.entities:
            if e.kind == "music":
                songs.setdefault(e.owner_artist_id, []).append(e)
        return songs

    def long_tail_candidates(self, kind="artist"):
        linked = {x for r in self.relations for x in (r.src, r.dst)}
        return {i for i in self.ids(kind) if i not in linked}

    def content_dim(self):
        for e in self.entities:
            if e.content_feature is not None:
                return len(e.content_feature)
        return 0


def validate(entities, interactions=(), relations=()):
    by_id = {}
    for e in entities:
        if e.id in by_id:
            raise DatasetError(f"duplicate entity id {e.id!r}")
        by_id[e.id] = e
    dims = {len(e.content_feature) for e in entities if e.content_feature is not None}
    if len(dims) > 1:
        raise DatasetError(f"content feature dims differ across entities: {sorted(dims)}")
    for e in entities:
        if e.kind == "music":
            owner = by_id.get(e.owner_artist_id)
            if owner is None:
                raise DatasetError(f"dangling id {e.owner_artist_id!r} (owner of {e.id!r})")
            if owner.kind != "artist":
                raise DatasetError(f"owner {owner.id!r} of {e.id!r} is not an artist")
    for it in interactions:
        if it.artist_id not in by_id or by_id[it.artist_id].kind != "artist":
            raise DatasetError(f"dangling id {it.artist_id!r} in interactions")
        if not it.weight >= 0:
            raise DatasetError(f"negative interaction weight for {it.artist_id!r}")
    for r in relations:
        for x in (r.src, r.dst):
            if x not in by_id:
                raise DatasetError(f"dangling id {x!r} in relations")
        if r.src == r.dst:
            raise DatasetError(f"self relation on {r.src!r}")
        if by_id[r.src].kind != by_id[r.dst].kind:
            raise DatasetError(f"relation {r.src!r}-{r.dst!r} joins different entity kinds")


def _read_csv(path, header):
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            got = next(reader)
        except StopIteration:
            raise DatasetError(f"{path.name}: empty file") from None
        if header is not None and got[:len(header)] != list(header):
            raise DatasetError(f"{path.name}:1: expected header {','.join(header)}, got {','.join(got)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            yield lineno, got, row


def load_dataset(data_dir=None, *, entities=None, content=None, interactions=None, relations=None):
    """Load and validate the CSV files of a dataset directory.

    Individual paths override the default file names in ``data_dir``;
    ``content``, ``interactions`` and ``relations`` may be absent.
    """
    base = Path(data_dir) if data_dir is not None else None
    def pick(given, default):
        if given is not None:
            return Path(given)
        return base / default if base is not None else None

    ent_path = pick(entities, "entities.csv")
    if ent_path is None or not ent_path.exists():
        raise DatasetError(f"missing entities file: {ent_path}")

    features = {}
    cpath = pick(content, "content.csv")
    if cpath is not None and cpath.exists():
        for lineno, header, row in _read_csv(cpath, ["id"]):
            if len(row) != len(header):
                raise DatasetError(f"{cpath.name}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                features[row[0]] = np.array([float(x) for x in row[1:]])
            except ValueError as exc:
                raise DatasetError(f"{cpath.name}:{lineno}: {exc}") from None

    header = ["id", "kind", "genre", "region", "popularity", "owner_artist_id"]
    records = []
    for lineno, _, row in _read_csv(ent_path, header):
        if len(row) != len(header):
            raise DatasetError(f"{ent_path.name}:{lineno}: expected {len(header)} fields, got {len(row)}")
        eid, kind, genre, region, pop, owner = row
        try:
            rec = EntityRecord(eid, kind, genre, region, int(pop), owner or None, features.get(eid))
        except (ValueError, DatasetError) as exc:
            raise DatasetError(f"{ent_path.name}:{lineno}: {exc}") from None
        records.append(rec)
    known = {r.id for r in records}
    for fid in features:
        if fid not in known:
            raise DatasetError(f"dangling id {fid!r} in {cpath.name}")

    inter = []
    ipath = pick(interactions, "interactions.csv")
    if ipath is not None and ipath.exists():
        for lineno, _, row in _read_csv(ipath, ["user_id", "artist_id", "weight"]):
            try:
                inter.append(InteractionRecord(row[0], row[1], float(row[2])))
            except (ValueError, IndexError) as exc:
                raise DatasetError(f"{ipath.name}:{lineno}: {exc}") from None

    rels = []
    rpath = pick(relations, "relations.csv")
    if rpath is not None and rpath.exists():
        for lineno, _, row in _read_csv(rpath, ["src", "dst"]):
            if len(row) != 2:
                raise DatasetError(f"{rpath.name}:{lineno}: expected 2 fields, got {len(row)}")
            rels.append(RelationEdge(row[0], row[1]))

    validate(records, inter, rels)
    split = {}
    spath = base / "split.csv" if base is not None else None
    if spath is not None and spath.exists():
        for lineno, _, row in _read_csv(spath, ["id", "split"]):
            if row[1] not in SPLITS:
                raise DatasetError(f"{spath.name}:{lineno}: unknown split {row[1]!r}")
            split[row[0]] = row[1]
    bundle = DatasetBundle(tuple(records), tuple(inter), tuple(rels))
    if split:
        bundle = _with_split(bundle, split)
    return bundle


def write_dataset(bundle, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "entities.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "kind", "genre", "region", "popularity", "owner_artist_id"])
        for e in bundle.entities:
            w.writerow([e.id, e.kind, e.genre, e.region, e.popularity, e.owner_artist_id or ""])
    dim = bundle.content_dim()
    with (out / "content.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id"] + [f"f{i}" for i in range(dim)])
        for e in bundle.entities:
            if e.content_feature is not None:
                w.writerow([e.id] + [repr(float(x)) for x in e.content_feature])
    with (out / "interactions.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user_id", "artist_id", "weight"])
        for it in bundle.interactions:
            w.writerow([it.user_id, it.artist_id, repr(float(it.weight))])
    with (out / "relations.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["src", "dst"])
        for r in bundle.relations:
            w.writerow([r.src, r.dst])
    if bundle.split:
        with (out / "split.csv").open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["id", "split"])
            for e in bundle.entities:
                if e.id in bundle.split:
                    w.writerow([e.id, bundle.split[e.id]])
    return out


# ---------------------------------------------------------------------------
# splitting
# ---------------------------------------------------------------------------

def _split_sizes(n, ratios):
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise DatasetError(f"split ratios must be three non-negative values summing to 1, got {ratios}")
    n_val = int(round(n * ratios[1]))
    n_test = int(round(n * ratios[2]))
    n_train = n - n_val - n_test
    sizes = (n_train, n_val, n_test)
    for name, ratio, size in zip(SPLITS, ratios, sizes):
        if ratio > 0 and size <= 0:
            raise DatasetError(f"{name} split of {n} entities at ratio {ratio} is empty")
    return sizes


def _with_split(bundle, split):
    cross = frozenset(
        (r.src, r.dst) for r in bundle.relations
        if split.get(r.src) is not None and split.get(r.src) != split.get(r.dst)
    )
    return replace(bundle, split=dict(split), cross_split=cross)


def split_dataset(bundle, ratios=(0.8, 0.1, 0.1), seed=0, kind="artist"):
    """Assign every entity of ``kind`` to train/val/test by seeded shuffle.

    Music items follow their owner's split when ``kind`` is artist, and vice
    versa nothing else is assigned. Relations crossing splits are kept and
    listed in ``cross_split``.
    """
    ids = sorted(bundle.ids(kind))
    sizes = _split_sizes(len(ids), ratios)
    order = np.random.default_rng(seed).permutation(len(ids))
    split = {}
    bounds = np.cumsum((0,) + sizes)
    for name, lo, hi in zip(SPLITS, bounds[:-1], bounds[1:]):
        for pos in order[lo:hi]:
            split[ids[pos]] = name
    if kind == "artist":
        for e in bundle.entities:
            if e.kind == "music":
                split[e.id] = split[e.owner_artist_id]
    return _with_split(bundle, split)


# ---------------------------------------------------------------------------
# synthetic generator
# ---------------------------------------------------------------------------

@dataclass
class SyntheticConfig:
    n_artists: int = 1000
    songs_per_artist_mean: float = 3.8
    n_users: int = 2000
    long_tail_target: float = 0.3697
    music_long_tail_target: float = 0.5306
    n_genres: int = 8
    n_regions: int = 6
    content_dim: int = 32
    content_noise: float = 2.0
    region_signal: float = 0.3
    song_noise: float = 0.5
    genre_affinity: float = 6.0
    region_affinity: float = 3.0
    popularity_affinity: float = 1.0
    meta_skew: float = 1.0
    n_scenes: int = 16
    scene_affinity: float = 30.0
    scene_signal: float = 1.5
    degree_exponent: float = 2.2
    mean_degree: float = 13.6
    music_mean_degree: float = 2.7
    interactions_per_user: float = 12.0
    interaction_exponent: float = 1.0
    split: tuple = (0.8, 0.1, 0.1)
    seed: int = 0

    def __post_init__(self):
        for name in ("n_artists", "n_users", "n_genres", "n_regions", "n_scenes", "content_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.songs_per_artist_mean < 1:
            raise ValueError("songs_per_artist_mean must be >= 1")
        for name in ("long_tail_target", "music_long_tail_target"):
            v = getattr(self, name)
            if not 0 <= v < 1:
                raise ValueError(f"{name} must lie in [0, 1), got {v}")


class InfeasibleTargetError(DatasetError):
    pass


def _pick_long_tail(rng, score, target):
    """Lowest-scoring ``round(target * n)`` nodes after log-normal jitter."""
    n = len(score)
    n_tail = int(round(target * n))
    if n - n_tail < 2 and n_tail < n:
        raise InfeasibleTargetError(
            f"long-tail target {target} leaves {n - n_tail} linked node(s); at least 2 are needed")
    if n_tail == n:
        return np.ones(n, dtype=bool)
    jitter = np.log(score) + rng.normal(scale=1.0, size=n)
    tail = np.zeros(n, dtype=bool)
    tail[np.argsort(jitter, kind="stable")[:n_tail]] = True
    return tail


def _sample_edges(rng, affinity, tail, mean_degree):
    """Undirected edges among non-tail nodes with ``P_ij = min(1, c * affinity_ij)``.

    ``c`` is set by bisection so the expected degree averaged over all nodes
    equals ``mean_degree``; head nodes left isolated are then linked to one
    partner drawn in proportion to affinity.
    """
    n = affinity.shape[0]
    head = np.flatnonzero(~tail)
    if len(head) == 0:
        return np.zeros(0, dtype=int), np.zeros(0, dtype=int)
    A = affinity[np.ix_(head, head)].copy()
    np.fill_diagonal(A, 0.0)
    iu = np.triu_indices(len(head), 1)
    a = A[iu]
    want = 0.5 * mean_degree * n
    if want > len(a):
        raise InfeasibleTargetError(
            f"mean degree {mean_degree} needs {want:.0f} edges but only {len(a)} pairs are available")
    lo, hi = 0.0, 1.0 / max(a.max(), 1e-300)
    while np.minimum(hi * a, 1.0).sum() < want and hi < 1e300:
        hi *= 2.0
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if np.minimum(mid * a, 1.0).sum() < want:
            lo = mid
        else:
            hi = mid
    keep = rng.random(len(a)) < np.minimum(hi * a, 1.0)
    src, dst = iu[0][keep], iu[1][keep]
    deg = np.bincount(np.concatenate([src, dst]), minlength=len(head))
    extra = set()
    for i in np.flatnonzero(deg == 0):
        row = A[i] / A[i].sum()
        j = int(rng.choice(len(head), p=row))
        extra.add((min(i, j), max(i, j)))
    if extra:
        e = np.array(sorted(extra))
        src, dst = np.concatenate([src, e[:, 0]]), np.concatenate([dst, e[:, 1]])
    return head[src], head[dst]


def _power_law(rng, n, exponent, xmin=1.0):
    return xmin * (1.0 - rng.random(n)) ** (-1.0 / (exponent - 1.0))


def _zipf(k, exponent):
    w = 1.0 / np.arange(1, k + 1) ** exponent
    return w / w.sum()


def generate_synthetic(cfg=None, **overrides):
    """Latent-cluster long-tail dataset calibrated to the target long-tail fractions.

    Artists draw Zipf-skewed genre and region, a popularity bucket from a
    power-law propensity, and a hidden scene. Content is the sum of genre,
    region and scene centroids plus isotropic noise; songs add further noise.
    Similarity edges favour a shared scene, metadata agreement and popular
    endpoints, among a long-tail set of the target size chosen from the least
    popular artists. Users favour one genre and one scene and otherwise pick
    artists by propensity.
    """
    cfg = replace(cfg, **overrides) if cfg is not None else SyntheticConfig(**overrides)
    cfg.__post_init__()
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_artists

    genre = rng.choice(cfg.n_genres, size=n, p=_zipf(cfg.n_genres, cfg.meta_skew))
    region = rng.choice(cfg.n_regions, size=n, p=_zipf(cfg.n_regions, cfg.meta_skew))
    # latent propensity drives both popularity bucket and degree
    propensity = _power_law(rng, n, cfg.degree_exponent)
    ranks = np.argsort(np.argsort(propensity + 1e-9 * rng.random(n)))
    popularity = np.minimum((ranks * N_POPULARITY) // n, N_POPULARITY - 1)

    genre_centroids = rng.normal(size=(cfg.n_genres, cfg.content_dim)) * 2.0
    region_offsets = rng.normal(size=(cfg.n_regions, cfg.content_dim)) * cfg.region_signal
    # scenes: hidden clusters that shape relations but are not metadata
    scene = rng.integers(cfg.n_scenes, size=n)
    scene_centroids = rng.normal(size=(cfg.n_scenes, cfg.content_dim)) * cfg.scene_signal
    artist_content = (genre_centroids[genre] + region_offsets[region] + scene_centroids[scene]
                      + cfg.content_noise * rng.normal(size=(n, cfg.content_dim)))

    same_g = genre[:, None] == genre[None, :]
    same_r = region[:, None] == region[None, :]
    same_p = np.abs(popularity[:, None] - popularity[None, :]) <= 1
    agreement = ((1.0 + cfg.genre_affinity * same_g) * (1.0 + cfg.region_affinity * same_r)
                 * (1.0 + cfg.popularity_affinity * same_p)
                 * (1.0 + cfg.scene_affinity * (scene[:, None] == scene[None, :])))
    affinity = np.outer(propensity, propensity) * agreement
    tail = _pick_long_tail(rng, propensity, cfg.long_tail_target)
    src, dst = _sample_edges(rng, affinity, tail, cfg.mean_degree)

    width = len(str(n - 1))
    aid = [f"a{i:0{width}d}" for i in range(n)]
    gname = [f"g{i}" for i in range(cfg.n_genres)]
    rname = [f"r{i}" for i in range(cfg.n_regions)]
    entities = [EntityRecord(aid[i], "artist", gname[genre[i]], rname[region[i]], int(popularity[i]),
                             None, artist_content[i]) for i in range(n)]
    relations = [RelationEdge(aid[s], aid[d]) for s, d in zip(src, dst)]

    # songs: at least one per artist, mean songs_per_artist_mean
    n_songs = 1 + rng.poisson(cfg.songs_per_artist_mean - 1.0, size=n)
    owner = np.repeat(np.arange(n), n_songs)
    m = len(owner)
    song_pop = np.clip(popularity[owner] + rng.integers(-1, 2, size=m), 0, N_POPULARITY - 1)
    song_content = artist_content[owner] + cfg.song_noise * rng.normal(size=(m, cfg.content_dim))
    swidth = len(str(m - 1))
    sid = [f"m{i:0{swidth}d}" for i in range(m)]
    entities += [EntityRecord(sid[k], "music", gname[genre[owner[k]]], rname[region[owner[k]]],
                              int(song_pop[k]), aid[owner[k]], song_content[k]) for k in range(m)]

    # music edges live between songs of the same or related artists
    related = np.zeros((n, n), dtype=bool)
    related[src, dst] = related[dst, src] = True
    np.fill_diagonal(related, True)
    song_prop = propensity[owner] * (1.0 + song_pop)
    s_aff = np.outer(song_prop, song_prop) * (related[owner][:, owner] + 0.01)
    s_tail = _pick_long_tail(rng, song_prop, cfg.music_long_tail_target)
    ssrc, sdst = _sample_edges(rng, s_aff, s_tail, cfg.music_mean_degree)
    relations += [RelationEdge(sid[s], sid[d]) for s, d in zip(ssrc, sdst)]

    # users: preferred genre, popularity-weighted choice
    taste = rng.integers(cfg.n_genres, size=cfg.n_users)
    taste_scene = rng.integers(cfg.n_scenes, size=cfg.n_users)
    base = propensity ** cfg.interaction_exponent
    base /= base.sum()
    interactions = []
    uwidth = len(str(cfg.n_users - 1))
    for u in range(cfg.n_users):
        w = base * np.where(genre == taste[u], 8.0, 1.0) * np.where(scene == taste_scene[u], 8.0, 1.0)
        w /= w.sum()
        k = min(n, 1 + rng.poisson(cfg.interactions_per_user - 1.0))
        picks = np.sort(rng.choice(n, size=k, replace=False, p=w))
        counts = 1 + rng.poisson(2.0, size=k)
        interactions += [InteractionRecord(f"u{u:0{uwidth}d}", aid[a], float(c))
                         for a, c in zip(picks, counts)]

    validate(entities, interactions, relations)
    bundle = DatasetBundle(tuple(entities), tuple(interactions), tuple(relations))
    return split_dataset(bundle, cfg.split, seed=cfg.seed)


# ---------------------------------------------------------------------------
# embedding container
# ---------------------------------------------------------------------------

@dataclass
class EmbeddingMatrix:
    ids: list
    values: np.ndarray

    def __post_init__(self):
        self.ids = list(self.ids)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] != len(self.ids):
            raise ValueError(f"{len(self.ids)} ids but values of shape {self.values.shape}")
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("duplicate ids in embedding matrix")
        self._row = {i: r for r, i in enumerate(self.ids)}

    @property
    def dim(self):
        return self.values.shape[1]

    def __len__(self):
        return len(self.ids)

    def __contains__(self, eid):
        return eid in self._row

    def row(self, eid):
        return self.values[self._row[eid]]

    def index_of(self, eid):
        return self._row[eid]

    def subset(self, ids):
        return EmbeddingMatrix(list(ids), self.values[[self._row[i] for i in ids]])


def pack_embeddings(m):
    if m.dim <= 0:
        raise EmbeddingFormatError("embedding dim must be positive")
    # ASCII-only JSON keeps character offsets equal to byte offsets on read
    id_blob = json.dumps(m.ids, ensure_ascii=True).encode("ascii")
    head = MAGIC + struct.pack("<BII", FORMAT_VERSION, m.dim, len(m.ids))
    return head + id_blob + m.values.astype("<f4").tobytes()


_HEADER = 13


def unpack_embeddings(buf, expected_dim=None):
    """Parse an embedding container; returns ``(matrix, bytes_consumed)``."""
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise EmbeddingFormatError("bad magic: not an LTFR embedding file")
    if len(buf) < _HEADER:
        raise EmbeddingFormatError("truncated file: header incomplete")
    version, dim, count = struct.unpack_from("<BII", buf, 4)
    if version != FORMAT_VERSION:
        raise EmbeddingFormatError(f"unsupported format version {version}")
    if expected_dim is not None and dim != expected_dim:
        raise EmbeddingFormatError(f"dim mismatch: file has {dim}, expected {expected_dim}")
    text = bytes(buf[_HEADER:]).decode("latin-1")
    try:
        ids, end = json.JSONDecoder().raw_decode(text)
    except json.JSONDecodeError:
        raise EmbeddingFormatError("truncated file: id block incomplete") from None
    if not isinstance(ids, list) or len(ids) != count:
        raise EmbeddingFormatError(f"header says {count} ids, id block does not match")
    pos = _HEADER + end
    nbytes = 4 * dim * count
    if len(buf) < pos + nbytes:
        raise EmbeddingFormatError("truncated file: value block incomplete")
    values = np.frombuffer(buf, dtype="<f4", count=dim * count, offset=pos).reshape(count, dim)
    return EmbeddingMatrix(ids, values.astype(np.float64)), pos + nbytes


def write_embeddings(m, path):
    path = Path(path)
    path.write_bytes(pack_embeddings(m))
    return path


def read_embeddings(path, expected_dim=None):
    m, _ = unpack_embeddings(Path(path).read_bytes(), expected_dim)
    return m


def quantize(values):
    """Round to 32-bit floats the way the container stores them."""
    return np.asarray(values, dtype=np.float64).astype(np.float32).astype(np.float64)


def degree_stats(bundle, kind="artist"):
    ids = bundle.ids(kind)
    pos = {i: k for k, i in enumerate(ids)}
    deg = np.zeros(len(ids), dtype=int)
    for r in bundle.relations:
        if r.src in pos and r.dst in pos:
            deg[pos[r.src]] += 1
            deg[pos[r.dst]] += 1
    return deg


def reference_split_ratios():
    """Train/val/test proportions of the reference artist dataset (7703/962/962)."""
    total = 7703 + 962 + 962
    return (7703 / total, 962 / total, 962 / total)

