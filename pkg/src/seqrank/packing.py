"""Pair sampling and greedy knapsack packing of variable-length user sequences.

Users with few sessions waste most of a fixed-length minibatch row as
padding.  ``greedy_knapsack`` repacks several short users into one row,
longest-first with first-fit, and records where each user's run begins so a
recurrent scan can reset its state at run boundaries instead of bleeding one
user's state into the next.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def pairwise_sample(labels, rng: np.random.Generator) -> tuple[int, int]:
    """Draw one (a, b) index pair from a session's purchase labels.

    ``a`` is drawn uniformly among items carrying the maximum label, ``b``
    uniformly among those carrying the minimum, excluding ``a``; the result
    is uniform over the admissible set.  With mixed labels that yields one
    purchased and one non-purchased item; when every label is equal the pair
    degenerates to an ordered pair of distinct items.  Indices are 0-based.
    """
    lab = np.asarray(labels)
    n = lab.size
    if n < 2:
        raise ValueError(f"pairwise_sample: need at least 2 items, got {n}")
    lo, hi = lab.min(), lab.max()
    top = np.flatnonzero(lab == hi)
    bottom = np.flatnonzero(lab == lo)
    a = int(top[rng.integers(top.size)])
    if hi == lo:
        others = np.setdiff1d(bottom, [a], assume_unique=False)
        b = int(others[rng.integers(others.size)])
    else:
        b = int(bottom[rng.integers(bottom.size)])
    return a, b


def pair_label(label_a: float, label_b: float) -> float:
    """Relative label of a sampled pair: label_a / (label_a + label_b)."""
    s = label_a + label_b
    if s == 0:
        raise ValueError("pair_label: both pair labels are 0, quotient undefined")
    return label_a / s


@dataclass
class PackingPlan:
    """Where every (user, session) of a batch lives in the packed layout.

    ``assignments[u][t]`` is the (row, slot) of user ``u``'s session ``t``;
    ``inverse`` maps back; ``start`` is a (rows, capacity) 0/1 array with a 1
    on the first slot of every user run; ``row_fill[r]`` counts occupied
    slots in row ``r``.  All indices are 0-based.
    """
    capacity: int
    assignments: list[list[tuple[int, int]]]
    inverse: dict[tuple[int, int], tuple[int, int]] = field(repr=False)
    start: np.ndarray = field(repr=False)
    row_fill: list[int] = field(default_factory=list)

    @property
    def user_count(self) -> int:
        return len(self.assignments)

    @property
    def packed_user_count(self) -> int:
        return len(self.row_fill)


def greedy_knapsack(lengths) -> PackingPlan:
    """Pack user sequence lengths into rows of capacity max(lengths).

    Users are popped longest-first (ties by original index); each goes into
    the first already-open row it fits into, measured with <=, otherwise it
    opens a new row.  Runs are contiguous, so the slot of session ``t`` of a
    user placed at offset ``o`` is ``o + t``.
    """
    lens = [int(x) for x in lengths]
    if not lens:
        raise ValueError("greedy_knapsack: empty length list")
    if any(x < 1 for x in lens):
        raise ValueError("greedy_knapsack: lengths must be >= 1")
    cap = max(lens)
    order = sorted(range(len(lens)), key=lambda u: (-lens[u], u))

    assignments: list[list[tuple[int, int]]] = [[] for _ in lens]
    row_fill: list[int] = []
    starts: list[tuple[int, int]] = []
    for u in order:
        need = lens[u]
        for r, fill in enumerate(row_fill):
            if fill + need <= cap:
                break
        else:
            row_fill.append(0)
            r = len(row_fill) - 1
        offset = row_fill[r]
        assignments[u] = [(r, offset + t) for t in range(need)]
        starts.append((r, offset))
        row_fill[r] = offset + need

    start = np.zeros((len(row_fill), cap), dtype=np.int8)
    for r, o in starts:
        start[r, o] = 1
    inverse = {assignments[u][t]: (u, t)
               for u in range(len(lens)) for t in range(lens[u])}
    return PackingPlan(capacity=cap, assignments=assignments,
                       inverse=inverse, start=start, row_fill=row_fill)


@dataclass
class PackedGrid:
    """Per-slot payloads arranged by a :class:`PackingPlan`.

    ``slots[r][c]`` holds the payload of the (user, session) mapped there,
    or None on padding; ``mask`` marks occupied slots.  ``dense`` zero-fills
    padding for callers that want a rectangular array view.
    """
    plan: PackingPlan
    slots: list[list]
    mask: np.ndarray

    def occupied(self) -> int:
        return int(self.mask.sum())

    def dense(self) -> np.ndarray:
        """Float view of scalar payloads with padding slots as 0."""
        out = np.zeros(self.mask.shape, dtype=np.float64)
        for r in range(self.mask.shape[0]):
            for c in range(self.mask.shape[1]):
                if self.mask[r, c]:
                    out[r, c] = self.slots[r][c]
        return out


def pack(per_user: list[list], plan: PackingPlan) -> PackedGrid:
    """Relocate per-user per-session payloads into the packed layout."""
    if len(per_user) != plan.user_count:
        raise ValueError(
            f"pack: plan covers {plan.user_count} users, batch has {len(per_user)}")
    rows = plan.packed_user_count
    slots: list[list] = [[None] * plan.capacity for _ in range(rows)]
    mask = np.zeros((rows, plan.capacity), dtype=bool)
    for u, items in enumerate(per_user):
        if len(items) != len(plan.assignments[u]):
            raise ValueError(
                f"pack: user {u} has {len(items)} sessions, plan expects "
                f"{len(plan.assignments[u])}")
        for t, payload in enumerate(items):
            r, c = plan.assignments[u][t]
            slots[r][c] = payload
            mask[r, c] = True
    return PackedGrid(plan=plan, slots=slots, mask=mask)


def unpack(grid: PackedGrid, plan: PackingPlan) -> list[list]:
    """Invert :func:`pack`, restoring the original (user, session) order."""
    out: list[list] = []
    for u in range(plan.user_count):
        row = []
        for t, (r, c) in enumerate(plan.assignments[u]):
            if not grid.mask[r, c]:
                raise ValueError(
                    f"unpack: plan points user {u} session {t} at masked slot ({r}, {c})")
            row.append(grid.slots[r][c])
        out.append(row)
    return out


@dataclass
class PackingStats:
    user_count: int
    packed_user_count: int
    capacity: int
    total_sessions: int
    compression: float
    padded_fraction_naive: float
    padded_fraction_packed: float


def packing_stats(lengths) -> PackingStats:
    """Compression factor and padded-slot fractions before/after packing."""
    plan = greedy_knapsack(lengths)
    total = sum(int(x) for x in lengths)
    n = plan.user_count
    rows = plan.packed_user_count
    cap = plan.capacity
    return PackingStats(
        user_count=n,
        packed_user_count=rows,
        capacity=cap,
        total_sessions=total,
        compression=n / rows,
        padded_fraction_naive=1.0 - total / (n * cap),
        padded_fraction_packed=1.0 - total / (rows * cap),
    )
