"""Domain types, the synthetic search-log generator, and the TSV codec.

A log is a list of :class:`UserHistory`; each user carries long-term id
sequences plus a chronological list of query sessions, and every session
holds the items that were shown with their click/purchase labels.

The generator gives each user a latent preference vector that drifts between
sessions.  Items live near latent category centers, clicks follow item/user
affinity, and within a session only the top clicked item can be purchased.
A configurable share of sessions is re-drawn until it is training-eligible.
Everything is deterministic in the seed, with one independent stream per
user so generation could be parallelized.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import sigmoid_array

SECONDS_PER_DAY = 86_400


# ---------------------------------------------------------------------------
# types
# ---------------------------------------------------------------------------

@dataclass
class ItemInteraction:
    """One ranked item: the id quadruple, dense features, and labels."""
    item_id: int
    category_id: int
    shop_id: int
    brand_id: int
    dense: list[float]
    clicked: bool
    purchased: bool

    def validate(self) -> None:
        if self.purchased and not self.clicked:
            raise ValueError(
                f"item {self.item_id}: purchased implies clicked")


@dataclass
class QuerySession:
    """A single query with its result list and interaction labels."""
    session_id: int
    timestamp: int
    query_category: int
    query_vector: list[float]
    items: list[ItemInteraction]

    @property
    def day(self) -> int:
        return self.timestamp // SECONDS_PER_DAY

    def labels(self) -> np.ndarray:
        return np.array([1.0 if it.purchased else 0.0 for it in self.items])

    def purchased_indices(self) -> list[int]:
        return [i for i, it in enumerate(self.items) if it.purchased]

    def training_eligible(self) -> bool:
        """At least two items with both a purchased and a non-purchased one.

        Pair sampling needs a positive and a negative side; sessions where
        everything was purchased have no defined pair label and are dropped
        together with purchase-free ones.
        """
        if len(self.items) < 2:
            return False
        n_pos = sum(1 for it in self.items if it.purchased)
        return 0 < n_pos < len(self.items)

    def dense_matrix(self) -> np.ndarray:
        return np.array([it.dense for it in self.items], dtype=np.float64)


@dataclass
class LongTermIds:
    """Parallel id sequences summarizing a user's older activity."""
    item_ids: list[int] = field(default_factory=list)
    category_ids: list[int] = field(default_factory=list)
    shop_ids: list[int] = field(default_factory=list)
    brand_ids: list[int] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.item_ids)


@dataclass
class UserHistory:
    """All sessions of one user, strictly ordered in time."""
    user_id: int
    longterm: LongTermIds
    sessions: list[QuerySession]

    def validate(self) -> None:
        ts = [s.timestamp for s in self.sessions]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError(f"user {self.user_id}: session timestamps not strictly increasing")
        sids = [s.session_id for s in self.sessions]
        if len(set(sids)) != len(sids):
            raise ValueError(f"user {self.user_id}: duplicate session ids")
        for s in self.sessions:
            for it in s.items:
                it.validate()


# ---------------------------------------------------------------------------
# generator
# ---------------------------------------------------------------------------

@dataclass
class GeneratorConfig:
    users: int = 100
    sessions_mean: float = 4.0
    sessions_max: int = 20
    items_mean: float = 8.0
    items_max: int = 40
    feature_width: int = 16
    latent_dim: int = 4
    days: int = 8
    drift: float = 0.3
    affinity_scale: float = 3.0
    click_bias: float = 0.5
    purchase_bias: float = 0.5
    purchase_noise: float = 0.5
    feature_noise: float = 0.1
    query_noise: float = 0.2
    query_temp: float = 4.0
    in_category_frac: float = 0.7
    eligible_fraction: float = 0.9
    longterm_len: int = 16
    n_items: int = 300
    n_categories: int = 10
    n_shops: int = 30
    n_brands: int = 30
    seed: int = 0

    def validate(self) -> None:
        if self.users < 1:
            raise ValueError("users must be >= 1")
        if self.items_max < 2:
            raise ValueError("items_max < 2 leaves no room for an eligible session")
        if not (1.0 <= self.sessions_mean <= self.sessions_max):
            raise ValueError("need 1 <= sessions_mean <= sessions_max")
        if not (1.0 <= self.items_mean <= self.items_max):
            raise ValueError("need 1 <= items_mean <= items_max")
        if self.feature_width < self.latent_dim:
            raise ValueError("feature_width must be >= latent_dim")
        if not (0.0 <= self.eligible_fraction <= 1.0):
            raise ValueError("eligible_fraction must lie in [0, 1]")
        if self.days < 1 or self.longterm_len < 0:
            raise ValueError("days must be >= 1 and longterm_len >= 0")
        for name in ("n_items", "n_categories", "n_shops", "n_brands"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


def _truncated_count_ratio(mean: float, maximum: int) -> float:
    """Solve for r so that 1 + sum_{k=1}^{max-1} r^k has the requested mean.

    Counts are drawn as 1 + min(floor(X), max-1) with X exponential; r is
    the per-step survival probability exp(-rate).
    """
    if maximum == 1 or mean <= 1.0:
        return 0.0
    if mean >= maximum:
        return 1.0
    target = mean - 1.0

    def expected(r: float) -> float:
        # geometric partial sum r + r^2 + ... + r^(max-1)
        return r * (1.0 - r ** (maximum - 1)) / (1.0 - r)

    lo, hi = 0.0, 1.0 - 1e-12
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if expected(mid) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _draw_count(rng: np.random.Generator, ratio: float, maximum: int) -> int:
    if ratio <= 0.0:
        return 1
    if ratio >= 1.0:
        return maximum
    u = rng.random()
    f = int(math.log(max(u, 1e-300)) / math.log(ratio))
    return 1 + min(f, maximum - 1)


class _Catalog:
    """Latent category centers and the item table, fixed per dataset."""

    def __init__(self, cfg: GeneratorConfig, rng: np.random.Generator):
        k = cfg.latent_dim
        centers = rng.standard_normal((cfg.n_categories, k))
        self.centers = centers / np.linalg.norm(centers, axis=1, keepdims=True)
        self.item_category = rng.integers(0, cfg.n_categories, size=cfg.n_items)
        self.item_shop = rng.integers(0, cfg.n_shops, size=cfg.n_items)
        self.item_brand = rng.integers(0, cfg.n_brands, size=cfg.n_items)
        vecs = self.centers[self.item_category] + 0.4 * rng.standard_normal((cfg.n_items, k))
        self.item_vec = vecs / np.linalg.norm(vecs, axis=1, keepdims=True)
        self.by_category = [np.flatnonzero(self.item_category == g)
                            for g in range(cfg.n_categories)]


def _softmax_choice(rng: np.random.Generator, logits: np.ndarray) -> int:
    z = logits - logits.max()
    p = np.exp(z)
    p /= p.sum()
    return int(rng.choice(p.size, p=p))


def _draw_session_labels(rng, affinities, must_eligible):
    """Click/purchase draw for one session; re-drawn when eligibility is owed.

    Clicks are independent logistic draws on affinity; the clicked item with
    the highest affinity is the one purchase candidate.  Returns (clicked
    bool array, purchased index or None).
    """
    n = affinities.size
    for _ in range(100):
        clicked = rng.random(n) < sigmoid_array(affinities)
        purchased = None
        if clicked.any():
            cand = int(np.flatnonzero(clicked)[np.argmax(affinities[clicked])])
            noise = rng.standard_normal()
            if rng.random() < float(sigmoid_array(
                    np.array([affinities[cand] + noise]))[0]):
                purchased = cand
        if not must_eligible or (purchased is not None and n >= 2):
            return clicked, purchased
    # degenerate affinities: force the top item through
    clicked = np.zeros(n, dtype=bool)
    top = int(np.argmax(affinities))
    clicked[top] = True
    return clicked, top


def generate_log(cfg: GeneratorConfig) -> list[UserHistory]:
    cfg.validate()
    root = np.random.SeedSequence(cfg.seed)
    streams = root.spawn(cfg.users + 1)
    catalog = _Catalog(cfg, np.random.default_rng(streams[0]))

    session_ratio = _truncated_count_ratio(cfg.sessions_mean, cfg.sessions_max)
    item_ratio = _truncated_count_ratio(cfg.items_mean, cfg.items_max)
    k = cfg.latent_dim
    pad = cfg.feature_width - k

    histories: list[UserHistory] = []
    for uid in range(cfg.users):
        rng = np.random.default_rng(streams[uid + 1])
        pref = rng.standard_normal(k)
        pref /= np.linalg.norm(pref)

        longterm = LongTermIds()
        for _ in range(cfg.longterm_len):
            g = _softmax_choice(rng, cfg.query_temp * (catalog.centers @ pref))
            pool = catalog.by_category[g]
            item = int(pool[rng.integers(pool.size)]) if pool.size else int(
                rng.integers(cfg.n_items))
            longterm.item_ids.append(item)
            longterm.category_ids.append(int(catalog.item_category[item]))
            longterm.shop_ids.append(int(catalog.item_shop[item]))
            longterm.brand_ids.append(int(catalog.item_brand[item]))

        n_sessions = _draw_count(rng, session_ratio, cfg.sessions_max)
        if cfg.days > 1:
            days = sorted(rng.integers(0, cfg.days - 1, size=n_sessions - 1).tolist())
            days.append(cfg.days - 1)  # the newest session always lands on the last day
        else:
            days = [0] * n_sessions

        quota = math.ceil(cfg.eligible_fraction * n_sessions)
        owed = {n_sessions - 1} if quota > 0 else set()
        if quota > 1:
            extra = rng.choice(n_sessions - 1, size=quota - 1, replace=False)
            owed.update(int(x) for x in extra)

        sessions: list[QuerySession] = []
        for t in range(n_sessions):
            must = t in owed
            n_items = _draw_count(rng, item_ratio, cfg.items_max)
            if must and n_items < 2:
                n_items = 2
            g = _softmax_choice(rng, cfg.query_temp * (catalog.centers @ pref))
            pool = catalog.by_category[g]
            ids = rng.integers(0, cfg.n_items, size=n_items)
            if pool.size:
                in_cat = rng.random(n_items) < cfg.in_category_frac
                ids = np.where(in_cat, pool[rng.integers(0, pool.size, size=n_items)], ids)
            affinities = cfg.affinity_scale * (catalog.item_vec[ids] @ pref) \
                + cfg.click_bias
            clicked, purchased = _draw_session_labels(rng, affinities, must)

            dense_noise = cfg.feature_noise * rng.standard_normal((n_items, k))
            distract = rng.standard_normal((n_items, pad)) if pad else np.zeros((n_items, 0))
            dense = np.hstack([catalog.item_vec[ids] + dense_noise, distract])
            qvec = catalog.centers[g] + cfg.query_noise * rng.standard_normal(k)

            items = [ItemInteraction(
                item_id=int(ids[i]),
                category_id=int(catalog.item_category[ids[i]]),
                shop_id=int(catalog.item_shop[ids[i]]),
                brand_id=int(catalog.item_brand[ids[i]]),
                dense=[float(x) for x in dense[i]],
                clicked=bool(clicked[i]) or i == purchased,
                purchased=i == purchased,
            ) for i in range(n_items)]

            sessions.append(QuerySession(
                session_id=-1,  # assigned globally below
                timestamp=days[t] * SECONDS_PER_DAY + t * 10,
                query_category=g,
                query_vector=[float(x) for x in qvec],
                items=items,
            ))
            step = cfg.drift * rng.standard_normal(k)
            pref = pref + step
            pref /= np.linalg.norm(pref)

        histories.append(UserHistory(user_id=uid, longterm=longterm, sessions=sessions))

    sid = 1
    for hist in histories:
        for s in hist.sessions:
            s.session_id = sid
            sid += 1
        hist.validate()
    return histories


@dataclass
class LogStats:
    users: int
    sessions_per_user_mean: float
    sessions_per_user_max: int
    items_per_session_mean: float
    items_per_session_max: int
    eligible_fraction: float
    purchase_free_sessions: int


def log_stats(histories: list[UserHistory]) -> LogStats:
    per_user = [len(h.sessions) for h in histories]
    per_session = [len(s.items) for h in histories for s in h.sessions]
    eligible = sum(1 for h in histories for s in h.sessions if s.training_eligible())
    no_purchase = sum(1 for h in histories for s in h.sessions
                      if not s.purchased_indices())
    total = sum(per_user)
    return LogStats(
        users=len(histories),
        sessions_per_user_mean=total / len(histories),
        sessions_per_user_max=max(per_user),
        items_per_session_mean=sum(per_session) / total,
        items_per_session_max=max(per_session),
        eligible_fraction=eligible / total,
        purchase_free_sessions=no_purchase,
    )


# ---------------------------------------------------------------------------
# TSV codec
# ---------------------------------------------------------------------------

_MAGIC = "#seqrank-log"
_VERSION = "1"


def _fmt(x: float) -> str:
    return repr(float(x))


def write_tsv(histories: list[UserHistory], path) -> int:
    """Serialize a log; returns the number of session rows written.

    An empty history list produces an empty file.  Lines starting with ``#``
    carry the format header and the per-user long-term id sequences; every
    other line is one session.  Reals are written with shortest round-trip
    decimals so read_tsv(write_tsv(x)) == x exactly.
    """
    rows = 0
    with open(path, "w", encoding="utf-8") as fh:
        if not histories:
            return 0
        feat = len(histories[0].sessions[0].items[0].dense) if any(
            h.sessions for h in histories) else 0
        qfeat = len(histories[0].sessions[0].query_vector) if any(
            h.sessions for h in histories) else 0
        fh.write(f"{_MAGIC}\t{_VERSION}\tfeat={feat}\tqfeat={qfeat}\n")
        for h in histories:
            lt = h.longterm
            fh.write("#user\t%d\t%s\t%s\t%s\t%s\n" % (
                h.user_id,
                ",".join(map(str, lt.item_ids)),
                ",".join(map(str, lt.category_ids)),
                ",".join(map(str, lt.shop_ids)),
                ",".join(map(str, lt.brand_ids))))
            for s in h.sessions:
                cells = [str(h.user_id), str(s.session_id), str(s.timestamp),
                         str(s.query_category)]
                cells += [_fmt(x) for x in s.query_vector]
                for it in s.items:
                    cells += [str(it.item_id), str(it.category_id),
                              str(it.shop_id), str(it.brand_id)]
                    cells += [_fmt(x) for x in it.dense]
                    cells += ["1" if it.clicked else "0",
                              "1" if it.purchased else "0"]
                fh.write("\t".join(cells) + "\n")
                rows += 1
    return rows


def _parse_id_list(cell: str) -> list[int]:
    return [int(x) for x in cell.split(",")] if cell else []


def read_tsv(path) -> list[UserHistory]:
    histories: list[UserHistory] = []
    current: UserHistory | None = None
    feat = qfeat = None
    with open(path, "r", encoding="utf-8") as fh:
        for ln, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            cells = line.split("\t")
            if cells[0] == _MAGIC:
                if cells[1] != _VERSION:
                    raise ValueError(f"line {ln}: unsupported log version {cells[1]!r}")
                feat = int(cells[2].removeprefix("feat="))
                qfeat = int(cells[3].removeprefix("qfeat="))
                continue
            if cells[0] == "#user":
                current = UserHistory(
                    user_id=int(cells[1]),
                    longterm=LongTermIds(*(_parse_id_list(c) for c in cells[2:6])),
                    sessions=[])
                histories.append(current)
                continue
            if feat is None:
                raise ValueError(f"line {ln}: session row before format header")
            if current is None:
                raise ValueError(f"line {ln}: session row before any #user record")
            fixed = 4 + qfeat
            per_item = 4 + feat + 2
            if len(cells) < fixed + per_item or (len(cells) - fixed) % per_item:
                raise ValueError(
                    f"line {ln}: ragged row, {len(cells)} fields do not fit "
                    f"{fixed} header columns plus items of {per_item}")
            uid = int(cells[0])
            if uid != current.user_id:
                raise ValueError(
                    f"line {ln}: session for user {uid} under #user {current.user_id}")
            n_items = (len(cells) - fixed) // per_item
            items = []
            for i in range(n_items):
                at = fixed + i * per_item
                it = ItemInteraction(
                    item_id=int(cells[at]), category_id=int(cells[at + 1]),
                    shop_id=int(cells[at + 2]), brand_id=int(cells[at + 3]),
                    dense=[float(x) for x in cells[at + 4:at + 4 + feat]],
                    clicked=cells[at + 4 + feat] == "1",
                    purchased=cells[at + 5 + feat] == "1")
                try:
                    it.validate()
                except ValueError as e:
                    raise ValueError(f"line {ln}: {e}") from None
                items.append(it)
            current.sessions.append(QuerySession(
                session_id=int(cells[1]), timestamp=int(cells[2]),
                query_category=int(cells[3]),
                query_vector=[float(x) for x in cells[4:4 + qfeat]],
                items=items))
    for h in histories:
        h.sessions.sort(key=lambda s: (s.session_id, s.timestamp))
        sids = [s.session_id for s in h.sessions]
        if len(set(sids)) != len(sids):
            raise ValueError(f"user {h.user_id}: duplicate session ids")
        ts = [s.timestamp for s in h.sessions]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError(
                f"user {h.user_id}: session ids and timestamps disagree on order")
    return histories


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------

def filter_training_eligible(histories: list[UserHistory]) -> list[UserHistory]:
    """Keep only training-eligible sessions; drop users left without any."""
    out = []
    for h in histories:
        kept = [s for s in h.sessions if s.training_eligible()]
        if kept:
            out.append(UserHistory(user_id=h.user_id, longterm=h.longterm,
                                   sessions=kept))
    return out


def make_batches(histories: list[UserHistory], batch_users: int) -> list[list[UserHistory]]:
    """Consecutive user groups of at most ``batch_users``."""
    if batch_users < 1:
        raise ValueError("batch_users must be >= 1")
    return [histories[i:i + batch_users]
            for i in range(0, len(histories), batch_users)]
