"""Ranking evaluation: sign-based session AUC, rank ROC AUC, and NDCG.

The headline statistic is a signed concordance over item pairs,

    auc_sign = (concordant - discordant) / (positives * negatives),

which lives in [-1, 1] and relates to the classical ROC AUC by
``roc = (auc_sign + 1) / 2`` on tie-free predictions.  Both are computed
from the same integer pair counts so that relation holds exactly in exact
arithmetic (float rounding of the final division can differ by one ulp).
Sessions too short or with constant labels have no defined value; they are
skipped and the skip counts surface in the report.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .datamodel import UserHistory
from .models import ModelParams, evolve_state, score_one_session


class MetricUndefined(ValueError):
    """The metric has no value on this input (short or constant-label list)."""


def _pair_counts(predictions, labels) -> tuple[int, int, int, int]:
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(labels, dtype=np.float64)
    if p.ndim != 1 or t.ndim != 1 or p.size != t.size:
        raise ValueError("predictions and labels must be equal-length vectors")
    if p.size < 2:
        raise MetricUndefined(f"need at least 2 items, got {p.size}")
    sp = np.sign(p[:, None] - p[None, :])
    st = np.sign(t[:, None] - t[None, :])
    concordant = int(np.sum((sp * st) > 0) // 2)
    discordant = int(np.sum((sp * st) < 0) // 2)
    # label-discordant pair count; for binary labels this is pos * neg
    denom = int(np.sum(st != 0) // 2)
    tied = denom - concordant - discordant
    if denom == 0:
        raise MetricUndefined("labels are constant; concordance undefined")
    return concordant, discordant, tied, denom


def auc_sign(predictions, labels) -> float:
    """Signed pair concordance in [-1, 1].

    Sums sign(p_i - p_j) * sign(t_i - t_j) over pairs and normalizes by the
    number of label-discordant pairs, so a perfectly ranked session scores 1
    and a perfectly inverted one -1; prediction ties contribute 0.
    """
    c, d, _, denom = _pair_counts(predictions, labels)
    return (c - d) / denom


def roc_auc(predictions, labels) -> float:
    """Classical ROC AUC by pair counting, ties credited half."""
    c, _, tied, denom = _pair_counts(predictions, labels)
    return (c + 0.5 * tied) / denom


def ndcg(predictions, labels) -> float:
    """Normalized discounted cumulative gain of the induced ranking.

    Items are ordered by descending prediction (ties kept in original
    order); gain (2^label - 1) at 1-based position i is discounted by
    log2(i + 1) and the sum is normalized by the best achievable ordering.
    """
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(labels, dtype=np.float64)
    if p.ndim != 1 or t.ndim != 1 or p.size != t.size:
        raise ValueError("predictions and labels must be equal-length vectors")
    if not np.any(t > 0):
        raise MetricUndefined("no positive labels; ideal gain is zero")
    order = np.argsort(-p, kind="stable")
    discounts = 1.0 / np.log2(np.arange(p.size) + 2.0)
    dcg = float(np.sum((2.0 ** t[order] - 1.0) * discounts))
    ideal = np.sort(t)[::-1]
    idcg = float(np.sum((2.0 ** ideal - 1.0) * discounts))
    return dcg / idcg


def _mean_metric(metric, per_session):
    """Apply a session metric, averaging values and counting skips."""
    values = []
    skipped = 0
    for predictions, labels in per_session:
        try:
            values.append(metric(predictions, labels))
        except MetricUndefined:
            skipped += 1
    mean = float(np.mean(values)) if values else None
    return mean, len(values), skipped


def session_auc(per_session) -> float:
    """Mean auc_sign over the evaluable sessions of an evaluation set.

    ``per_session`` yields (predictions, labels) pairs; sessions where the
    statistic is undefined are dropped, and having nothing left is an error
    rather than a silent zero.
    """
    mean, evaluated, skipped = _mean_metric(auc_sign, list(per_session))
    if evaluated == 0:
        raise ValueError(
            f"session_auc: no evaluable sessions ({skipped} skipped)")
    return mean


# ---------------------------------------------------------------------------
# evaluation protocol
# ---------------------------------------------------------------------------

@dataclass
class GroupReport:
    users: int = 0
    sessions: int = 0
    session_auc: float | None = None
    session_roc: float | None = None
    ndcg: float | None = None


@dataclass
class MetricsReport:
    session_auc: float
    session_roc: float
    ndcg: float | None
    users: int
    sessions: int
    skipped_auc: int
    skipped_ndcg: int
    groups: dict[str, GroupReport] = field(default_factory=dict)


PAST_SESSION_THRESHOLD = 5


def evaluate_protocol(params: ModelParams, histories: list[UserHistory],
                      warmup_days: int) -> MetricsReport:
    """Warm per-user state on earlier days, score final-day sessions only.

    The final day is the latest day present in ``histories``.  For the
    recurrent variants the hidden state is evolved through each user's
    sessions from the ``warmup_days`` days before the final day (purchased
    items only, their true labels); every final-day session is then scored
    from that state, so evaluation labels never feed back into it.
    Feed-forward variants score the final day directly.

    Users are broken down two ways: by past-session count (fewer than
    5 vs. at least 5 sessions before the final day) and by whether any
    final-day query category never occurred in the user's earlier queries
    or long-term category ids.
    """
    if warmup_days < 1:
        raise ValueError("warmup_days must be at least 1")
    days = [s.day for h in histories for s in h.sessions]
    if not days:
        raise ValueError("evaluate_protocol: no sessions to evaluate")
    final_day = max(days)
    window_start = final_day - warmup_days

    scored = []   # (user_key tuple, [(scores, labels), ...])
    for hist in histories:
        targets = [s for s in hist.sessions if s.day == final_day]
        if not targets:
            continue
        past = [s for s in hist.sessions if s.day < final_day]
        warm = [s for s in past if s.day >= window_start]
        state = evolve_state(params, hist, warm) if params.recurrent else None
        rows = [(score_one_session(params, hist, s, state)[0], s.labels())
                for s in targets]
        seen = {s.query_category for s in past}
        seen.update(hist.longterm.category_ids)
        category_new = any(s.query_category not in seen for s in targets)
        scored.append(((len(past), category_new), rows))

    all_rows = [row for _, rows in scored for row in rows]
    auc, evaluated, skipped_auc = _mean_metric(auc_sign, all_rows)
    if evaluated == 0:
        raise ValueError(
            f"evaluate_protocol: no evaluable final-day sessions "
            f"({skipped_auc} skipped)")
    roc, _, _ = _mean_metric(roc_auc, all_rows)
    gain, _, skipped_ndcg = _mean_metric(ndcg, all_rows)

    groups = {}
    def membership(past_count, category_new):
        yield ("past_sessions_lt_%d" % PAST_SESSION_THRESHOLD
               if past_count < PAST_SESSION_THRESHOLD
               else "past_sessions_ge_%d" % PAST_SESSION_THRESHOLD)
        yield "category_new" if category_new else "category_seen"

    for (past_count, category_new), rows in scored:
        for key in membership(past_count, category_new):
            g = groups.setdefault(key, [])
            g.append(rows)
    group_reports = {}
    for key, user_rows in sorted(groups.items()):
        rows = [row for rows in user_rows for row in rows]
        g_auc, _, _ = _mean_metric(auc_sign, rows)
        g_roc, _, _ = _mean_metric(roc_auc, rows)
        g_gain, _, _ = _mean_metric(ndcg, rows)
        group_reports[key] = GroupReport(
            users=len(user_rows), sessions=len(rows), session_auc=g_auc,
            session_roc=g_roc, ndcg=g_gain)

    return MetricsReport(
        session_auc=auc, session_roc=roc, ndcg=gain,
        users=len(scored), sessions=len(all_rows),
        skipped_auc=skipped_auc, skipped_ndcg=skipped_ndcg,
        groups=group_reports)
