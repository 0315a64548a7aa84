"""Model variants over session sequences, from feed-forward to actor-critic.

Four variants share one feature pipeline (id embeddings, dense features,
query features, and a pooled view of the user's long-term ids):

* ``dnn``     -- long-term ids sum-pooled, per-item MLP score, no recurrence
* ``din-s``   -- long-term ids pooled by zero-attention against query+item
* ``rnn``     -- din-s features fed through a GRU whose state carries across
                 the user's sessions; the state after a session is the mean
                 GRU output of the purchased items (unchanged if none)
* ``s3ddpg``  -- rnn plus a pairwise critic and a frozen target critic

The recurrent scan can run either per user or over a knapsack-packed layout
(`boundary_aware_scan`), which resets the state wherever a new user's run
begins; both orderings produce identical values.
"""
from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import numcore as nc
from .autodiff import Tensor
from .datamodel import LongTermIds, QuerySession, UserHistory
from .numcore import ParamStore
from .packing import PackedGrid, PackingPlan, greedy_knapsack, pack, pair_label, unpack

VARIANTS = ("dnn", "din-s", "rnn", "s3ddpg")
_RECURRENT = ("rnn", "s3ddpg")


@dataclass
class ModelDims:
    embed: int = 8
    state: int = 16
    feature_width: int = 16
    query_feat: int = 4
    encoder_hidden: tuple = (32,)
    actor_hidden: tuple = (32, 16)
    critic_hidden: tuple = (64, 32)
    attn_hidden: tuple = (16,)
    vocab_items: int = 300
    vocab_categories: int = 10
    vocab_shops: int = 30
    vocab_brands: int = 30

    def encoder_input(self) -> int:
        # four id embeddings + dense + query id embedding + query vector + pooled
        return 4 * self.embed + self.feature_width + self.embed \
            + self.query_feat + self.embed


@dataclass
class ModelParams:
    variant: str
    dims: ModelDims
    store: ParamStore
    target: ParamStore | None = None

    @property
    def recurrent(self) -> bool:
        return self.variant in _RECURRENT


def _init_mlp(store: ParamStore, prefix: str, widths: tuple[int, ...],
              rng: np.random.Generator) -> None:
    for i, (fan_in, fan_out) in enumerate(zip(widths, widths[1:])):
        bound = 1.0 / np.sqrt(fan_in)
        store.add(f"{prefix}.{i}.w", rng.uniform(-bound, bound, (fan_in, fan_out)))
        store.add(f"{prefix}.{i}.b", np.zeros((1, fan_out)))


def _mlp_slice(store: ParamStore, prefix: str) -> list[tuple[Tensor, Tensor]]:
    layers = []
    i = 0
    while f"{prefix}.{i}.w" in store:
        layers.append((store[f"{prefix}.{i}.w"], store[f"{prefix}.{i}.b"]))
        i += 1
    return layers


def init_model(variant: str, dims: ModelDims, rng: np.random.Generator,
               dtype=np.float32) -> ModelParams:
    """Fresh parameters; every table gets an extra row 0 for unknown ids."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}, expected one of {VARIANTS}")
    store = ParamStore(dtype=dtype)
    e = dims.embed
    bound = 1.0 / np.sqrt(e)
    for name, vocab in (("item", dims.vocab_items),
                        ("category", dims.vocab_categories),
                        ("shop", dims.vocab_shops),
                        ("brand", dims.vocab_brands),
                        ("query", dims.vocab_categories)):
        store.add(f"emb.{name}", rng.uniform(-bound, bound, (vocab + 1, e)))
    if variant != "dnn":
        _init_mlp(store, "attn", (4 * e, *dims.attn_hidden, 1), rng)
    _init_mlp(store, "enc", (dims.encoder_input(), *dims.encoder_hidden, dims.state), rng)
    if variant in _RECURRENT:
        nc.init_gru(store, "gru", dims.state, dims.state, rng)
    _init_mlp(store, "actor", (dims.state, *dims.actor_hidden, 1), rng)
    target = None
    if variant == "s3ddpg":
        _init_mlp(store, "critic", (2 * dims.state, *dims.critic_hidden, 1), rng)
        target = ParamStore(dtype=dtype)
        for name, t in store.items():
            if name.startswith("critic."):
                target.add(name, t.data)
    return ModelParams(variant=variant, dims=dims, store=store, target=target)


def sync_target(params: ModelParams) -> None:
    """Overwrite the target critic with the live critic, shapes preserved."""
    if params.target is None:
        raise ValueError(f"variant {params.variant!r} has no target critic")
    for name, t in params.target.items():
        t.data[...] = params.store[name].data


# ---------------------------------------------------------------------------
# feature pipeline
# ---------------------------------------------------------------------------

def _rows_for_ids(ids, vocab: int) -> np.ndarray:
    """Map raw ids onto table rows; anything outside [0, vocab) hits row 0."""
    arr = np.asarray(ids, dtype=np.int64)
    return np.where((arr >= 0) & (arr < vocab), arr + 1, 0)


def _embed(store: ParamStore, table: str, ids, vocab: int) -> Tensor:
    return ad.take_rows(store[f"emb.{table}"], _rows_for_ids(ids, vocab))


def zero_attention_pool(keys: Tensor, context: Tensor,
                        attn_layers: list[tuple[Tensor, Tensor]]) -> Tensor:
    """Attention-pool key rows against a context row, with a zero escape unit.

    The scorer sees [key, context, key - context, key * context] per row;
    softmax runs over the scores plus one constant 0 logit, so when nothing
    in the history is relevant the pooled vector can shrink toward zero.
    """
    n = keys.shape[0]
    ctx = ad.repeat_rows(context, n)
    x = ad.concat_cols([keys, ctx, ad.sub(keys, ctx), ad.mul(keys, ctx)])
    scores = nc.mlp_forward(x, attn_layers)
    weights = ad.softmax_zero(scores)
    return ad.matmul(ad.transpose(weights), keys)


def sum_pool(keys: Tensor) -> Tensor:
    ones = Tensor.const(np.ones((1, keys.shape[0]), dtype=keys.dtype))
    return ad.matmul(ones, keys)


class _UserContext:
    """Tape nodes shared by every session of one user inside one graph."""

    def __init__(self, params: ModelParams, hist: UserHistory):
        self.params = params
        store, dims = params.store, params.dims
        lt = hist.longterm
        if len(lt) == 0:
            self.keys = None
        else:
            self.keys = ad.add(
                ad.add(_embed(store, "item", lt.item_ids, dims.vocab_items),
                       _embed(store, "category", lt.category_ids, dims.vocab_categories)),
                ad.add(_embed(store, "shop", lt.shop_ids, dims.vocab_shops),
                       _embed(store, "brand", lt.brand_ids, dims.vocab_brands)))
        self._pooled_sum = None

    def pooled_sum(self) -> Tensor:
        if self._pooled_sum is None:
            if self.keys is None:
                e = self.params.dims.embed
                self._pooled_sum = Tensor.const(
                    np.zeros((1, e), dtype=self.params.store.dtype))
            else:
                self._pooled_sum = sum_pool(self.keys)
        return self._pooled_sum


def encode_session_items(params: ModelParams, ctx: _UserContext,
                         session: QuerySession, item_indices) -> Tensor:
    """Encoder output, one row per selected item of the session."""
    store, dims = params.store, params.dims
    items = [session.items[i] for i in item_indices]
    n = len(items)
    if n == 0:
        raise ValueError("encode_session_items: empty item selection")
    dtype = store.dtype

    emb_item = _embed(store, "item", [it.item_id for it in items], dims.vocab_items)
    emb_cat = _embed(store, "category", [it.category_id for it in items],
                     dims.vocab_categories)
    emb_shop = _embed(store, "shop", [it.shop_id for it in items], dims.vocab_shops)
    emb_brand = _embed(store, "brand", [it.brand_id for it in items], dims.vocab_brands)
    dense = Tensor.const(np.array([it.dense for it in items]), dtype=dtype)
    if dense.shape[1] != dims.feature_width:
        raise ValueError(
            f"session {session.session_id}: dense width {dense.shape[1]} != "
            f"configured {dims.feature_width}")
    q_emb = _embed(store, "query", [session.query_category], dims.vocab_categories)
    q_vec = Tensor.const(
        np.repeat(np.asarray(session.query_vector, dtype=dtype)[None, :], n, axis=0))
    if q_vec.shape[1] != dims.query_feat:
        raise ValueError(
            f"session {session.session_id}: query vector width {q_vec.shape[1]} "
            f"!= configured {dims.query_feat}")

    if params.variant == "dnn":
        pooled = ad.repeat_rows(ctx.pooled_sum(), n)
    elif ctx.keys is None:
        pooled = Tensor.const(np.zeros((n, dims.embed), dtype=dtype))
    else:
        attn = _mlp_slice(store, "attn")
        item_keys = ad.add(ad.add(emb_item, emb_cat), ad.add(emb_shop, emb_brand))
        per_item = [zero_attention_pool(
            ctx.keys, ad.add(q_emb, ad.take_rows(item_keys, [i])), attn)
            for i in range(n)]
        pooled = per_item[0] if n == 1 else ad.vstack(per_item)

    x = ad.concat_cols([emb_item, emb_cat, emb_shop, emb_brand, dense,
                        ad.repeat_rows(q_emb, n), q_vec, pooled])
    return nc.mlp_forward(x, _mlp_slice(store, "enc"))


# ---------------------------------------------------------------------------
# recurrence
# ---------------------------------------------------------------------------

def rnn_kernel(enc: Tensor, state: Tensor, purchased_rows,
               gru: nc.GruWeights) -> tuple[Tensor, Tensor]:
    """One session step: per-item GRU outputs plus the carried state.

    Every item row is pushed through the cell against the same incoming
    state; the next state is the mean output over the purchased rows, or the
    incoming state untouched when the session bought nothing.
    """
    omega = nc.gru_cell(enc, state, gru)
    if purchased_rows:
        return omega, ad.mean_rows(omega, purchased_rows)
    return omega, state


def zero_state(params: ModelParams) -> Tensor:
    return Tensor.const(np.zeros((1, params.dims.state), dtype=params.store.dtype))


def boundary_aware_scan(grid: PackedGrid, plan: PackingPlan,
                        params: ModelParams) -> PackedGrid:
    """Run the recurrent kernel left-to-right over a packed layout.

    Each slot holds ``(enc, purchased_rows)``.  A start marker replaces the
    incoming state with the zero state, so runs packed back-to-back in one
    row stay independent; the scan refuses layouts whose markers and
    occupancy disagree.
    """
    gru = nc.gru_slice(params.store, "gru")
    rows, cap = grid.mask.shape
    out: list[list] = [[None] * cap for _ in range(rows)]
    for r in range(rows):
        state = None
        for c in range(cap):
            started = plan.start[r, c] == 1
            if not grid.mask[r, c]:
                if started:
                    raise ValueError(f"start marker on a masked slot ({r}, {c})")
                continue
            if started:
                state = zero_state(params)
            elif state is None:
                raise ValueError(f"row {r} slot {c}: occupied run without a start marker")
            enc, purchased_rows = grid.slots[r][c]
            omega, state = rnn_kernel(enc, state, purchased_rows, gru)
            out[r][c] = omega
    return PackedGrid(plan=plan, slots=out, mask=grid.mask.copy())


# ---------------------------------------------------------------------------
# training forward
# ---------------------------------------------------------------------------

@dataclass
class StepRecord:
    """Tape handles for one (user, session) step of a training forward."""
    user_id: int
    session_id: int
    pair: tuple[int, int]
    lam: float
    eta: Tensor
    reward: Tensor
    q: Tensor | None = None
    q_target: float | None = None


@dataclass
class TrajectoryTensors:
    per_user: list[list[StepRecord]]

    def steps(self):
        for user in self.per_user:
            yield from user

    def count(self) -> int:
        return sum(len(u) for u in self.per_user)


def _actor_layers(params: ModelParams):
    return _mlp_slice(params.store, "actor")


def forward_pairs(params: ModelParams, batch: list[UserHistory],
                  pairs: list[list[tuple[int, int]]],
                  packed: bool = True) -> TrajectoryTensors:
    """Build the training graph for a batch of sampled session pairs.

    ``pairs[u][t]`` is the (a, b) item pair for session ``t`` of batch user
    ``u``.  Recurrent variants scan sessions through the GRU -- over the
    knapsack-packed layout when ``packed`` -- while feed-forward variants
    score the encoded pair directly.  Scores for the two pair items are
    computed row-by-row so that swapping the pair negates the logit exactly.
    """
    if len(pairs) != len(batch):
        raise ValueError("forward_pairs: one pair list per batch user required")
    encs: list[list] = []
    for hist, user_pairs in zip(batch, pairs):
        if len(user_pairs) != len(hist.sessions):
            raise ValueError(
                f"user {hist.user_id}: {len(user_pairs)} pairs for "
                f"{len(hist.sessions)} sessions")
        ctx = _UserContext(params, hist)
        per = []
        for session, (a, b) in zip(hist.sessions, user_pairs):
            labels = session.labels()
            lam = pair_label(float(labels[a]), float(labels[b]))
            if lam not in (0.0, 1.0):
                raise ValueError(
                    f"session {session.session_id}: pair label {lam} is not binary; "
                    "drop sessions whose items are all purchased")
            enc = encode_session_items(params, ctx, session, [a, b])
            purchased_rows = [r for r, i in enumerate((a, b))
                              if session.items[i].purchased]
            per.append((enc, purchased_rows, lam, session, (a, b)))
        encs.append(per)

    if params.recurrent:
        if packed:
            plan = greedy_knapsack([len(p) for p in encs])
            grid = pack([[(e, pr) for e, pr, _, _, _ in per] for per in encs], plan)
            omegas = unpack(boundary_aware_scan(grid, plan, params), plan)
        else:
            gru = nc.gru_slice(params.store, "gru")
            omegas = []
            for per in encs:
                state = zero_state(params)
                rows = []
                for enc, purchased_rows, _, _, _ in per:
                    omega, state = rnn_kernel(enc, state, purchased_rows, gru)
                    rows.append(omega)
                omegas.append(rows)
    else:
        omegas = [[e for e, _, _, _, _ in per] for per in encs]

    actor = _actor_layers(params)
    critic = _mlp_slice(params.store, "critic") if params.variant == "s3ddpg" else None
    target_np = None
    if params.target is not None:
        target_np = [(params.target[f"critic.{i}.w"].data,
                      params.target[f"critic.{i}.b"].data)
                     for i in range(len(critic))]

    out: list[list[StepRecord]] = []
    for hist, per, oms in zip(batch, encs, omegas):
        rows = []
        for (enc, purchased_rows, lam, session, pair), omega in zip(per, oms):
            row_a = ad.take_rows(omega, [0])
            row_b = ad.take_rows(omega, [1])
            eta = ad.sub(nc.mlp_forward(row_a, actor), nc.mlp_forward(row_b, actor))
            reward = ad.neg(ad.pair_logloss_t(eta, lam))
            rec = StepRecord(user_id=hist.user_id, session_id=session.session_id,
                             pair=pair, lam=lam, eta=eta, reward=reward)
            if critic is not None:
                both = ad.concat_cols([row_a, row_b])
                rec.q = nc.mlp_forward(both, critic)
                if target_np is not None:
                    rec.q_target = float(
                        nc.mlp_forward_np(both.data, target_np)[0, 0])
            rows.append(rec)
        out.append(rows)
    return TrajectoryTensors(per_user=out)


def listwise_scores(params: ModelParams, hist: UserHistory,
                    initial_state: np.ndarray | None = None
                    ) -> tuple[list[np.ndarray], np.ndarray | None]:
    """Offline forward pass: score every item of every session in order.

    Recurrent variants thread the state through the whole history starting
    from ``initial_state`` (zero when omitted); the per-session score arrays
    and the final state come back.
    """
    ctx = _UserContext(params, hist)
    actor = _actor_layers(params)
    scores: list[np.ndarray] = []
    if not params.recurrent:
        for session in hist.sessions:
            enc = encode_session_items(params, ctx, session,
                                       range(len(session.items)))
            scores.append(nc.mlp_forward(enc, actor).data.ravel().copy())
        return scores, None
    gru = nc.gru_slice(params.store, "gru")
    if initial_state is None:
        state = zero_state(params)
    else:
        state = Tensor.const(np.asarray(initial_state, dtype=params.store.dtype)
                             .reshape(1, -1))
    for session in hist.sessions:
        enc = encode_session_items(params, ctx, session, range(len(session.items)))
        omega, state = rnn_kernel(enc, state, session.purchased_indices(), gru)
        scores.append(nc.mlp_forward(omega, actor).data.ravel().copy())
    return scores, state.data.ravel().copy()


def evolve_state(params: ModelParams, hist: UserHistory,
                 sessions, state: np.ndarray | None = None) -> np.ndarray:
    """Advance the recurrent state through sessions without scoring them.

    Only purchased items are pushed through the cell (they alone define the
    next state), so warm-up over long histories stays cheap; purchase-free
    sessions leave the state untouched.
    """
    if not params.recurrent:
        raise ValueError(f"variant {params.variant!r} carries no state")
    ctx = _UserContext(params, hist)
    gru = nc.gru_slice(params.store, "gru")
    if state is None:
        st = zero_state(params)
    else:
        st = Tensor.const(np.asarray(state, dtype=params.store.dtype).reshape(1, -1))
    for session in sessions:
        idx = session.purchased_indices()
        if not idx:
            continue
        enc = encode_session_items(params, ctx, session, idx)
        omega, st = rnn_kernel(enc, st, list(range(len(idx))), gru)
    return st.data.ravel().copy()


def score_one_session(params: ModelParams, hist: UserHistory,
                      session: QuerySession, state: np.ndarray | None
                      ) -> tuple[np.ndarray, np.ndarray | None]:
    """Incremental-serving step: score one session, return the next state.

    The state moves only when the session contains a purchase; feed-forward
    variants have no state and get None back.
    """
    ctx = _UserContext(params, hist)
    enc = encode_session_items(params, ctx, session, range(len(session.items)))
    if not params.recurrent:
        return nc.mlp_forward(enc, _actor_layers(params)).data.ravel().copy(), None
    gru = nc.gru_slice(params.store, "gru")
    if state is None:
        st = zero_state(params)
    else:
        st = Tensor.const(np.asarray(state, dtype=params.store.dtype).reshape(1, -1))
    omega, st = rnn_kernel(enc, st, session.purchased_indices(), gru)
    scores = nc.mlp_forward(omega, _actor_layers(params)).data.ravel().copy()
    return scores, st.data.ravel().copy()


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

_CKPT_MAGIC = b"SEQRANK-CKPT-1\n"


def save_checkpoint(params: ModelParams, path) -> None:
    """Named float32 little-endian blocks behind a JSON metadata header."""
    meta = {
        "variant": params.variant,
        "dims": dataclasses.asdict(params.dims),
    }
    blocks: list[tuple[str, np.ndarray]] = list(
        (name, t.data) for name, t in params.store.items())
    if params.target is not None:
        blocks += [(f"target.{name}", t.data) for name, t in params.target.items()]
    payload = json.dumps(meta, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<I", len(payload)))
        fh.write(payload)
        fh.write(struct.pack("<I", len(blocks)))
        for name, arr in blocks:
            nb = name.encode()
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<II", arr.shape[0], arr.shape[1]))
            fh.write(arr.astype("<f4").tobytes())


def load_checkpoint(path) -> ModelParams:
    try:
        with open(path, "rb") as fh:
            return _read_checkpoint(fh, path)
    except struct.error as exc:
        raise ValueError(f"{path}: truncated checkpoint ({exc})") from exc


def _read_checkpoint(fh, path) -> ModelParams:
    magic = fh.read(len(_CKPT_MAGIC))
    if magic != _CKPT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic {magic!r})")
    (meta_len,) = struct.unpack("<I", fh.read(4))
    meta = json.loads(fh.read(meta_len).decode())
    dims_raw = dict(meta["dims"])
    for key in ("encoder_hidden", "actor_hidden", "critic_hidden", "attn_hidden"):
        dims_raw[key] = tuple(dims_raw[key])
    dims = ModelDims(**dims_raw)
    variant = meta["variant"]
    if variant not in VARIANTS:
        raise ValueError(f"{path}: unknown variant {variant!r}")
    (n_blocks,) = struct.unpack("<I", fh.read(4))
    store = ParamStore(dtype=np.float32)
    target = ParamStore(dtype=np.float32) if variant == "s3ddpg" else None
    for _ in range(n_blocks):
        (name_len,) = struct.unpack("<H", fh.read(2))
        name = fh.read(name_len).decode()
        rows, cols = struct.unpack("<II", fh.read(8))
        raw = fh.read(rows * cols * 4)
        if len(raw) != rows * cols * 4:
            raise ValueError(f"{path}: truncated block {name!r}")
        arr = np.frombuffer(raw, dtype="<f4").reshape(rows, cols)
        if name.startswith("target."):
            if target is None:
                raise ValueError(f"{path}: target block in non-critic checkpoint")
            target.add(name.removeprefix("target."), arr)
        else:
            store.add(name, arr)
    return ModelParams(variant=variant, dims=dims, store=store, target=target)
