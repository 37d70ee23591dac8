"""MovieLens-1M style corpus handling.

Covers parsing the ``::``-separated rating/user/movie files, turning
profiles into fielded categorical features, binarizing ratings into an
implicit-feedback interaction set, the cold-start split, the normalized
bipartite graph, and a synthetic corpus generator for tests.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import re
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

log = logging.getLogger(__name__)

GENDERS = ("F", "M")
AGE_CODES = (1, 18, 25, 35, 45, 50, 56)
N_OCCUPATIONS = 21
GENRES = (
    "Action", "Adventure", "Animation", "Children's", "Comedy", "Crime",
    "Documentary", "Drama", "Fantasy", "Film-Noir", "Horror", "Musical",
    "Mystery", "Romance", "Sci-Fi", "Thriller", "War", "Western",
)
# Decade buckets from the 1910s through the 2000s.
YEAR_BUCKET_BASE = 1910
N_YEAR_BUCKETS = 10

_TITLE_YEAR = re.compile(r"^(?P<title>.*)\((?P<year>\d{4})\)\s*$")


class ParseError(Exception):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class ValidationError(Exception):
    pass


@dataclass(frozen=True)
class RawRating:
    user_id: int
    item_id: int
    rating: int
    timestamp: int


@dataclass(frozen=True)
class UserProfile:
    user_id: int
    gender: str
    age_group: int
    occupation: int


@dataclass(frozen=True)
class ItemProfile:
    item_id: int
    title: str
    year: int
    genres: frozenset[str]


def parse_ratings(stream) -> list[RawRating]:
    """Parse ``uid::mid::rating::timestamp`` lines, preserving order."""
    out = []
    for line_no, line in enumerate(stream, start=1):
        line = line.rstrip("\n")
        if not line:
            continue
        parts = line.split("::")
        if len(parts) != 4:
            raise ParseError(line_no, f"expected 4 '::' fields, got {len(parts)}")
        try:
            uid, iid, rating, ts = (int(p) for p in parts)
        except ValueError:
            raise ParseError(line_no, f"non-integer field in {line!r}") from None
        if uid <= 0 or iid <= 0:
            raise ValidationError(f"line {line_no}: ids must be positive, got {uid}, {iid}")
        if not 1 <= rating <= 5:
            raise ValidationError(f"line {line_no}: rating {rating} outside 1..5")
        out.append(RawRating(uid, iid, rating, ts))
    return out


def parse_users(stream) -> list[UserProfile]:
    """Parse ``uid::gender::age::occupation::zip`` lines; zip is dropped."""
    out = []
    for line_no, line in enumerate(stream, start=1):
        line = line.rstrip("\n")
        if not line:
            continue
        parts = line.split("::")
        if len(parts) != 5:
            raise ParseError(line_no, f"expected 5 '::' fields, got {len(parts)}")
        uid_s, gender, age_s, occ_s, _zip = parts
        try:
            uid, age, occ = int(uid_s), int(age_s), int(occ_s)
        except ValueError:
            raise ParseError(line_no, f"non-integer field in {line!r}") from None
        if gender not in GENDERS:
            raise ValidationError(f"line {line_no}: unknown gender {gender!r}")
        if age not in AGE_CODES:
            raise ValidationError(f"line {line_no}: unknown age code {age}")
        if not 0 <= occ < N_OCCUPATIONS:
            raise ValidationError(f"line {line_no}: occupation {occ} outside 0..20")
        out.append(UserProfile(uid, gender, age, occ))
    return out


def parse_items(stream) -> list[ItemProfile]:
    """Parse ``mid::title (year)::genre|genre`` lines."""
    out = []
    for line_no, line in enumerate(stream, start=1):
        line = line.rstrip("\n")
        if not line:
            continue
        parts = line.split("::")
        if len(parts) != 3:
            raise ParseError(line_no, f"expected 3 '::' fields, got {len(parts)}")
        iid_s, title, genres_s = parts
        try:
            iid = int(iid_s)
        except ValueError:
            raise ParseError(line_no, f"non-integer item id {iid_s!r}") from None
        m = _TITLE_YEAR.match(title)
        if m is None:
            raise ValidationError(f"line {line_no}: title {title!r} lacks a '(YYYY)' suffix")
        year = int(m.group("year"))
        genres = genres_s.split("|")
        for g in genres:
            if g not in GENRES:
                raise ValidationError(f"line {line_no}: unknown genre {g!r}")
        if not genres:
            raise ValidationError(f"line {line_no}: empty genre list")
        out.append(ItemProfile(iid, m.group("title").strip(), year, frozenset(genres)))
    return out


@dataclass
class InteractionSet:
    """Binarized positive pairs plus dense id maps over the rating universe."""

    positives: set[tuple[int, int]]
    user_index: dict[int, int]  # raw user id -> dense 0-based id
    item_index: dict[int, int]

    @property
    def n_users(self) -> int:
        return len(self.user_index)

    @property
    def n_items(self) -> int:
        return len(self.item_index)

    def user_ids(self) -> list[int]:
        """Raw user ids ordered by dense id."""
        return sorted(self.user_index, key=self.user_index.get)

    def item_ids(self) -> list[int]:
        return sorted(self.item_index, key=self.item_index.get)


def binarize(ratings: list[RawRating], threshold: int) -> InteractionSet:
    """Keep pairs rated at or above threshold; ids are indexed over ALL
    rated users/items so the universe does not shrink with the threshold."""
    if not 1 <= threshold <= 5:
        raise ValueError(f"threshold {threshold} outside 1..5")
    user_ids = sorted({r.user_id for r in ratings})
    item_ids = sorted({r.item_id for r in ratings})
    user_index = {u: i for i, u in enumerate(user_ids)}
    item_index = {m: i for i, m in enumerate(item_ids)}
    positives = {(r.user_id, r.item_id) for r in ratings if r.rating >= threshold}
    return InteractionSet(positives, user_index, item_index)


@dataclass
class ColdStartSplit:
    train: InteractionSet
    test_cold_users: dict[int, list[int]]  # raw user id -> held-out raw item ids
    test_cold_items: dict[int, list[int]]  # raw item id -> held-out raw user ids
    cold_users: set[int]
    cold_items: set[int]
    dropped_cold_users: list[int] = field(default_factory=list)
    dropped_cold_items: list[int] = field(default_factory=list)


def cold_start_split(inter: InteractionSet, user_frac: float, item_frac: float,
                     seed: int) -> ColdStartSplit:
    """Move every pair touching a sampled cold user/item out of train.

    Pairs joining a cold user to a cold item land on the cold-user test
    side. Cold entities left with no held-out positives are dropped from
    the test maps (their ids stay cold so they never re-enter train).
    """
    if not (0 <= user_frac < 1 and 0 <= item_frac < 1):
        raise ValueError("fractions must satisfy 0 <= frac < 1")
    rng = np.random.default_rng(seed)
    n_cold_u = int(user_frac * inter.n_users)
    n_cold_i = int(item_frac * inter.n_items)
    user_ids = np.array(inter.user_ids())
    item_ids = np.array(inter.item_ids())
    cold_users = set(rng.choice(user_ids, size=n_cold_u, replace=False).tolist()) if n_cold_u else set()
    cold_items = set(rng.choice(item_ids, size=n_cold_i, replace=False).tolist()) if n_cold_i else set()

    train_pairs = set()
    test_u: dict[int, list[int]] = {u: [] for u in cold_users}
    test_i: dict[int, list[int]] = {m: [] for m in cold_items}
    for u, m in sorted(inter.positives):
        if u in cold_users:
            test_u[u].append(m)
        elif m in cold_items:
            test_i[m].append(u)
        else:
            train_pairs.add((u, m))

    dropped_u = sorted(u for u, items in test_u.items() if not items)
    dropped_i = sorted(m for m, users in test_i.items() if not users)
    for u in dropped_u:
        del test_u[u]
        log.info("cold user %d has no held-out positives; dropped from test", u)
    for m in dropped_i:
        del test_i[m]
        log.info("cold item %d has no held-out positives; dropped from test", m)

    train = InteractionSet(train_pairs, dict(inter.user_index), dict(inter.item_index))
    return ColdStartSplit(train, test_u, test_i, cold_users, cold_items,
                          dropped_u, dropped_i)


@dataclass(frozen=True)
class FieldSpec:
    name: str
    vocab_size: int
    multi_valued: bool


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered field layout for one side (users or items)."""

    side: str
    fields: tuple[FieldSpec, ...]

    def field(self, name: str) -> FieldSpec:
        for f in self.fields:
            if f.name == name:
                return f
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "side": self.side,
            "fields": [
                {"name": f.name, "vocab_size": f.vocab_size, "multi_valued": f.multi_valued}
                for f in self.fields
            ],
        }

    @staticmethod
    def from_dict(d: dict) -> "FeatureSchema":
        return FeatureSchema(
            d["side"],
            tuple(FieldSpec(f["name"], f["vocab_size"], f["multi_valued"])
                  for f in d["fields"]),
        )


def schema_hash(user_schema: FeatureSchema, item_schema: FeatureSchema) -> str:
    blob = json.dumps([user_schema.to_dict(), item_schema.to_dict()],
                      sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def build_schemas(inter: InteractionSet) -> tuple[FeatureSchema, FeatureSchema]:
    """Field layouts are fixed by the canonical code sets; only the id
    vocabularies depend on the corpus."""
    user_schema = FeatureSchema("user", (
        FieldSpec("gender", len(GENDERS), False),
        FieldSpec("age", len(AGE_CODES), False),
        FieldSpec("occupation", N_OCCUPATIONS, False),
        FieldSpec("user_id", inter.n_users, False),
    ))
    item_schema = FeatureSchema("item", (
        FieldSpec("genres", len(GENRES), True),
        FieldSpec("year_bucket", N_YEAR_BUCKETS, False),
        FieldSpec("item_id", inter.n_items, False),
    ))
    return user_schema, item_schema


@dataclass(frozen=True)
class FieldedFeatures:
    """Per-entity feature indices, one entry per schema field in order."""

    fields: tuple[tuple[str, tuple[int, ...]], ...]
    schema_id: str


def year_bucket(year: int) -> int:
    return min(max((year - YEAR_BUCKET_BASE) // 10, 0), N_YEAR_BUCKETS - 1)


def vectorize_user(profile: UserProfile, schema: FeatureSchema,
                   user_index: dict[int, int], sid: str = "") -> FieldedFeatures:
    if profile.user_id not in user_index:
        raise ValidationError(f"user id {profile.user_id} not covered by the schema")
    idx = (
        ("gender", (GENDERS.index(profile.gender),)),
        ("age", (AGE_CODES.index(profile.age_group),)),
        ("occupation", (profile.occupation,)),
        ("user_id", (user_index[profile.user_id],)),
    )
    return FieldedFeatures(idx, sid)


def vectorize_item(profile: ItemProfile, schema: FeatureSchema,
                   item_index: dict[int, int], sid: str = "") -> FieldedFeatures:
    if profile.item_id not in item_index:
        raise ValidationError(f"item id {profile.item_id} not covered by the schema")
    genre_idx = tuple(sorted(GENRES.index(g) for g in profile.genres))
    idx = (
        ("genres", genre_idx),
        ("year_bucket", (year_bucket(profile.year),)),
        ("item_id", (item_index[profile.item_id],)),
    )
    return FieldedFeatures(idx, sid)


@dataclass
class SideFeatures:
    """Dense-id-ordered feature columns for one side, ready for embedding.

    Single-valued fields are an int index array of length n; multi-valued
    fields are a row-normalized CSR pooling matrix (n, vocab) whose product
    with an embedding table is the mean of the member rows.
    """

    schema: FeatureSchema
    n: int
    single: dict[str, np.ndarray]
    pooled: dict[str, sp.csr_matrix]

    def field_names(self) -> list[str]:
        return [f.name for f in self.schema.fields]


def collect_features(fielded: list[FieldedFeatures], schema: FeatureSchema,
                     order: np.ndarray | None = None) -> SideFeatures:
    """Stack per-entity features into arrays; row r describes dense id r.

    ``fielded`` must be supplied in dense-id order (the id field of entry
    r must be r) unless ``order`` gives the permutation to apply.
    """
    if order is not None:
        fielded = [fielded[i] for i in order]
    n = len(fielded)
    single: dict[str, np.ndarray] = {}
    pooled: dict[str, sp.csr_matrix] = {}
    for spec in schema.fields:
        if spec.multi_valued:
            rows, cols, vals = [], [], []
            for r, ff in enumerate(fielded):
                members = dict(ff.fields)[spec.name]
                if not members:
                    raise ValidationError(f"entity row {r}: empty multi-valued field {spec.name}")
                w = 1.0 / len(members)
                for c in members:
                    rows.append(r)
                    cols.append(c)
                    vals.append(w)
            pooled[spec.name] = sp.csr_matrix(
                (vals, (rows, cols)), shape=(n, spec.vocab_size))
        else:
            arr = np.empty(n, dtype=np.int64)
            for r, ff in enumerate(fielded):
                (arr[r],) = dict(ff.fields)[spec.name]
            if arr.size and (arr.min() < 0 or arr.max() >= spec.vocab_size):
                raise ValidationError(f"field {spec.name}: index outside vocabulary")
            single[spec.name] = arr
    return SideFeatures(schema, n, single, pooled)


def user_features(profiles: list[UserProfile], schema: FeatureSchema,
                  inter: InteractionSet, sid: str = "") -> SideFeatures:
    """Vectorize every user in the interaction universe, dense-id order."""
    by_id = {p.user_id: p for p in profiles}
    missing = [u for u in inter.user_index if u not in by_id]
    if missing:
        raise ValidationError(f"no profile for user ids {missing[:5]} "
                              f"({len(missing)} missing)")
    fielded = [vectorize_user(by_id[u], schema, inter.user_index, sid)
               for u in inter.user_ids()]
    return collect_features(fielded, schema)


def item_features(profiles: list[ItemProfile], schema: FeatureSchema,
                  inter: InteractionSet, sid: str = "") -> SideFeatures:
    """Vectorize every rated item, dense-id order; unrated profiles are skipped."""
    by_id = {p.item_id: p for p in profiles}
    missing = [m for m in inter.item_index if m not in by_id]
    if missing:
        raise ValidationError(f"no profile for item ids {missing[:5]} "
                              f"({len(missing)} missing)")
    fielded = [vectorize_item(by_id[m], schema, inter.item_index, sid)
               for m in inter.item_ids()]
    return collect_features(fielded, schema)


@dataclass
class BipartiteGraph:
    """User-item interaction graph with symmetric self-loop normalization."""

    n_users: int
    n_items: int
    edges: np.ndarray  # (E, 2) dense (user, item) pairs
    adjacency: sp.csr_matrix  # normalized, (n_users+n_items) square

    @property
    def n_nodes(self) -> int:
        return self.n_users + self.n_items


def build_graph(train: InteractionSet) -> BipartiteGraph:
    """Build D^(-1/2) (A + I) D^(-1/2) over all dense ids; entities
    without train edges keep a self-loop so every row has degree >= 1."""
    nu, ni = train.n_users, train.n_items
    n = nu + ni
    if train.positives:
        pairs = np.array(sorted(
            (train.user_index[u], train.item_index[m]) for u, m in train.positives),
            dtype=np.int64)
    else:
        pairs = np.empty((0, 2), dtype=np.int64)
    rows = np.concatenate([pairs[:, 0], nu + pairs[:, 1], np.arange(n)])
    cols = np.concatenate([nu + pairs[:, 1], pairs[:, 0], np.arange(n)])
    vals = np.ones(rows.shape[0])
    a_hat = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    deg = np.asarray(a_hat.sum(axis=1)).reshape(-1)
    d_inv_sqrt = sp.diags(1.0 / np.sqrt(deg))
    norm = (d_inv_sqrt @ a_hat @ d_inv_sqrt).tocsr()
    return BipartiteGraph(nu, ni, pairs, norm)


@dataclass
class PreparedDataset:
    """Everything downstream stages need, as written by the prepare step."""

    split: ColdStartSplit
    user_schema: FeatureSchema
    item_schema: FeatureSchema
    user_feats: SideFeatures
    item_feats: SideFeatures
    stats: dict
    data_seed: int


def corpus_stats(ratings: list[RawRating], inter: InteractionSet,
                 split: ColdStartSplit) -> dict:
    n_cells = inter.n_users * inter.n_items
    return {
        "n_users": inter.n_users,
        "n_items": inter.n_items,
        "n_ratings": len(ratings),
        "density": len(ratings) / n_cells if n_cells else 0.0,
        "n_positives": len(inter.positives),
        "n_train_pairs": len(split.train.positives),
        "n_cold_users": len(split.cold_users),
        "n_cold_items": len(split.cold_items),
        "n_test_cold_user_pairs": sum(len(v) for v in split.test_cold_users.values()),
        "n_test_cold_item_pairs": sum(len(v) for v in split.test_cold_items.values()),
    }


def prepare_dataset(users: list[UserProfile], items: list[ItemProfile],
                    ratings: list[RawRating], threshold: int, user_frac: float,
                    item_frac: float, seed: int) -> PreparedDataset:
    inter = binarize(ratings, threshold)
    split = cold_start_split(inter, user_frac, item_frac, seed)
    user_schema, item_schema = build_schemas(inter)
    sid = schema_hash(user_schema, item_schema)
    uf = user_features(users, user_schema, inter, sid)
    itf = item_features(items, item_schema, inter, sid)
    stats = corpus_stats(ratings, inter, split)
    return PreparedDataset(split, user_schema, item_schema, uf, itf, stats, seed)


def _features_to_json(feats: SideFeatures) -> dict:
    fields: dict[str, list] = {}
    for spec in feats.schema.fields:
        if spec.multi_valued:
            pool = feats.pooled[spec.name]
            fields[spec.name] = [pool.indices[pool.indptr[r]:pool.indptr[r + 1]].tolist()
                                 for r in range(feats.n)]
        else:
            fields[spec.name] = [[int(v)] for v in feats.single[spec.name]]
    return {"n": feats.n, "fields": fields}


def _features_from_json(d: dict, schema: FeatureSchema, sid: str) -> SideFeatures:
    fielded = []
    for r in range(d["n"]):
        row = tuple((spec.name, tuple(d["fields"][spec.name][r]))
                    for spec in schema.fields)
        fielded.append(FieldedFeatures(row, sid))
    return collect_features(fielded, schema)


def save_prepared(out_dir, prepared: PreparedDataset) -> list[str]:
    """Write schema/split manifests, interaction CSVs and feature tables.

    Returns the list of files written (relative to ``out_dir``).
    """
    os.makedirs(out_dir, exist_ok=True)
    split = prepared.split
    inter = split.train
    sid = schema_hash(prepared.user_schema, prepared.item_schema)
    written = []

    def dump_json(name, payload):
        path = os.path.join(out_dir, name)
        with open(path, "w") as f:
            json.dump(payload, f, indent=2, sort_keys=True)
        written.append(name)

    def dump_pairs(name, header, pairs):
        path = os.path.join(out_dir, name)
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(header)
            for a, b in pairs:
                w.writerow([a, b])
        written.append(name)

    dump_json("schema.json", {
        "user": prepared.user_schema.to_dict(),
        "item": prepared.item_schema.to_dict(),
        "hash": sid,
    })
    dump_json("split.json", {
        "data_seed": prepared.data_seed,
        "stats": prepared.stats,
        "user_ids": inter.user_ids(),
        "item_ids": inter.item_ids(),
        "cold_users": sorted(split.cold_users),
        "cold_items": sorted(split.cold_items),
        "dropped_cold_users": split.dropped_cold_users,
        "dropped_cold_items": split.dropped_cold_items,
    })
    dump_pairs("train.csv", ["user_id", "item_id"], sorted(inter.positives))
    dump_pairs("test_cold_users.csv", ["user_id", "item_id"],
               sorted((u, m) for u, items in split.test_cold_users.items() for m in items))
    dump_pairs("test_cold_items.csv", ["item_id", "user_id"],
               sorted((m, u) for m, users in split.test_cold_items.items() for u in users))
    dump_json("features_users.json", _features_to_json(prepared.user_feats))
    dump_json("features_items.json", _features_to_json(prepared.item_feats))
    return written


def load_prepared(out_dir) -> PreparedDataset:
    def read_json(name):
        with open(os.path.join(out_dir, name)) as f:
            return json.load(f)

    def read_pairs(name):
        with open(os.path.join(out_dir, name), newline="") as f:
            r = csv.reader(f)
            next(r)
            return [(int(a), int(b)) for a, b in r]

    schema_doc = read_json("schema.json")
    user_schema = FeatureSchema.from_dict(schema_doc["user"])
    item_schema = FeatureSchema.from_dict(schema_doc["item"])
    sid = schema_hash(user_schema, item_schema)
    if sid != schema_doc["hash"]:
        raise ValidationError("schema.json hash does not match its contents")

    split_doc = read_json("split.json")
    user_index = {int(u): i for i, u in enumerate(split_doc["user_ids"])}
    item_index = {int(m): i for i, m in enumerate(split_doc["item_ids"])}
    train = InteractionSet(set(read_pairs("train.csv")), user_index, item_index)
    test_u: dict[int, list[int]] = {}
    for u, m in read_pairs("test_cold_users.csv"):
        test_u.setdefault(u, []).append(m)
    test_i: dict[int, list[int]] = {}
    for m, u in read_pairs("test_cold_items.csv"):
        test_i.setdefault(m, []).append(u)
    split = ColdStartSplit(
        train, test_u, test_i,
        set(split_doc["cold_users"]), set(split_doc["cold_items"]),
        list(split_doc["dropped_cold_users"]), list(split_doc["dropped_cold_items"]))
    uf = _features_from_json(read_json("features_users.json"), user_schema, sid)
    itf = _features_from_json(read_json("features_items.json"), item_schema, sid)
    return PreparedDataset(split, user_schema, item_schema, uf, itf,
                           split_doc["stats"], split_doc["data_seed"])


def write_movielens_files(out_dir, users: list[UserProfile],
                          items: list[ItemProfile], ratings: list[RawRating]) -> None:
    """Emit ``users.dat``/``movies.dat``/``ratings.dat`` in the ``::`` format."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "ratings.dat"), "w", encoding="latin-1") as f:
        for r in ratings:
            f.write(f"{r.user_id}::{r.item_id}::{r.rating}::{r.timestamp}\n")
    with open(os.path.join(out_dir, "users.dat"), "w", encoding="latin-1") as f:
        for u in users:
            f.write(f"{u.user_id}::{u.gender}::{u.age_group}::{u.occupation}::00000\n")
    with open(os.path.join(out_dir, "movies.dat"), "w", encoding="latin-1") as f:
        for m in items:
            genres = "|".join(sorted(m.genres))
            f.write(f"{m.item_id}::{m.title} ({m.year})::{genres}\n")


def load_movielens_dir(data_dir):
    """Parse the three raw files of a MovieLens-1M style directory."""
    paths = {name: os.path.join(data_dir, name)
             for name in ("ratings.dat", "users.dat", "movies.dat")}
    for name, path in paths.items():
        if not os.path.exists(path):
            raise FileNotFoundError(path)
    with open(paths["ratings.dat"], encoding="latin-1") as f:
        ratings = parse_ratings(f)
    with open(paths["users.dat"], encoding="latin-1") as f:
        users = parse_users(f)
    with open(paths["movies.dat"], encoding="latin-1") as f:
        items = parse_items(f)
    return users, items, ratings


def synthetic_dataset(seed: int, n_users: int, n_items: int,
                      n_latent_topics: int = 4,
                      match_rate: float = 0.12,
                      mismatch_rate: float = 0.01):
    """Generate a corpus whose attributes predict interactions.

    Every user and item carries a latent topic; categorical attributes are
    derived from the topic (with a little noise), and positive ratings are
    far more likely when topics match. Returns (users, items, ratings).
    """
    if n_users < 2 or n_items < 2:
        raise ValueError("need at least 2 users and 2 items")
    rng = np.random.default_rng(seed)
    user_topics = rng.integers(0, n_latent_topics, size=n_users)
    item_topics = rng.integers(0, n_latent_topics, size=n_items)

    users = []
    for u in range(n_users):
        t = int(user_topics[u])
        if rng.random() < 0.1:
            t_attr = int(rng.integers(0, n_latent_topics))
        else:
            t_attr = t
        gender = GENDERS[t_attr % 2]
        age = AGE_CODES[t_attr % len(AGE_CODES)]
        occ = (t_attr * 5 + int(rng.integers(0, 3))) % N_OCCUPATIONS
        users.append(UserProfile(u + 1, gender, age, occ))

    items = []
    for m in range(n_items):
        t = int(item_topics[m])
        if rng.random() < 0.1:
            t_attr = int(rng.integers(0, n_latent_topics))
        else:
            t_attr = t
        main_genre = GENRES[t_attr % len(GENRES)]
        genres = {main_genre}
        if rng.random() < 0.3:
            genres.add(GENRES[int(rng.integers(0, len(GENRES)))])
        year = 1920 + (t_attr % 9) * 10 + int(rng.integers(0, 10))
        items.append(ItemProfile(m + 1, f"Item {m + 1}", year, frozenset(genres)))

    ratings = []
    ts = 1_000_000
    for u in range(n_users):
        match = user_topics[u] == item_topics
        p = np.where(match, match_rate, mismatch_rate)
        hits = rng.random(n_items) < p
        lows = rng.random(n_items) < 0.03
        for m in range(n_items):
            if hits[m]:
                ratings.append(RawRating(u + 1, m + 1, int(rng.integers(4, 6)), ts))
                ts += 1
            elif lows[m]:
                ratings.append(RawRating(u + 1, m + 1, int(rng.integers(1, 4)), ts))
                ts += 1
    return users, items, ratings
