"""Incremental-serving replay: score, then update, one session at a time.

The replay walks each user's sessions in timestamp order, scoring every
session with the state accumulated so far and only then folding the session
in (and only if it contains a purchase -- purchase-free sessions leave the
state untouched and log a zero delta).  Serving never packs: packing exists
to batch training, and here each user is a single sequential stream.

With ``audit=True`` the whole-history offline forward pass is recomputed
from the same starting states and compared score by score; any gap beyond
1e-6 means the incremental path and the offline path have drifted apart,
and the first offending (user, session) is reported.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .datamodel import UserHistory
from .models import ModelParams, listwise_scores, score_one_session


@dataclass
class UpdateLogEntry:
    user_id: int
    session_id: int
    delta_norm: float


@dataclass
class SessionPrediction:
    user_id: int
    session_id: int
    scores: np.ndarray


@dataclass
class ServingState:
    """Per-user hidden states plus the update log of one replay run.

    Only the states are persisted (the log is a per-run diagnostic), keyed
    by user id in a plain text file that lives beside the checkpoint.
    """
    variant: str
    state_dim: int
    states: dict[int, np.ndarray] = field(default_factory=dict)
    log: list[UpdateLogEntry] = field(default_factory=list)


_STATE_HEADER = "#seqrank-serving v1"


def save_serving_state(state: ServingState, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{_STATE_HEADER}\t{state.variant}\t{state.state_dim}\n")
        for uid in sorted(state.states):
            vec = np.asarray(state.states[uid], dtype=np.float32).ravel()
            # float32 -> float64 is exact, and repr(float) round-trips, so
            # the decimal text restores every state bit-for-bit
            cells = " ".join(repr(float(x)) for x in vec)
            fh.write(f"{uid}\t{cells}\n")


def load_serving_state(path) -> ServingState:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ValueError("empty serving-state file")
    head = lines[0].split("\t")
    if len(head) != 3 or head[0] != _STATE_HEADER:
        raise ValueError(f"not a serving-state file: {path}")
    variant, dim = head[1], int(head[2])
    state = ServingState(variant=variant, state_dim=dim)
    for line in lines[1:]:
        if not line:
            continue
        uid_cell, _, vec_cell = line.partition("\t")
        vec = np.array([float(x) for x in vec_cell.split()], dtype=np.float32)
        if vec.size != dim:
            raise ValueError(
                f"user {uid_cell}: state has {vec.size} entries, header says {dim}")
        state.states[int(uid_cell)] = vec
    return state


def _check_session_order(hist: UserHistory) -> None:
    ts = [s.timestamp for s in hist.sessions]
    for i in range(1, len(ts)):
        if ts[i] <= ts[i - 1]:
            raise ValueError(
                f"user {hist.user_id}: session {hist.sessions[i].session_id} "
                f"out of timestamp order ({ts[i]} after {ts[i - 1]})")


def serve_replay(params: ModelParams, histories: list[UserHistory],
                 audit: bool = False, state: ServingState | None = None
                 ) -> tuple[list[SessionPrediction], ServingState]:
    """Replay histories through the incremental-update pipeline.

    Pass a previously saved ``state`` to resume: users found there start
    from their stored hidden state instead of zeros.  Returns one
    prediction per (user, session) in replay order plus the final state.
    """
    if not params.recurrent:
        raise ValueError(
            f"variant {params.variant!r} keeps no serving state; "
            "replay needs a recurrent checkpoint")
    dim = params.dims.state
    if state is None:
        state = ServingState(variant=params.variant, state_dim=dim)
    else:
        if state.variant != params.variant or state.state_dim != dim:
            raise ValueError(
                f"serving state was saved for {state.variant!r}/dim "
                f"{state.state_dim}, checkpoint is {params.variant!r}/dim {dim}")
    initial = {uid: vec.copy() for uid, vec in state.states.items()}

    predictions: list[SessionPrediction] = []
    for hist in histories:
        _check_session_order(hist)
        current = state.states.get(hist.user_id)
        for session in hist.sessions:
            scores, nxt = score_one_session(params, hist, session, current)
            predictions.append(SessionPrediction(
                user_id=hist.user_id, session_id=session.session_id,
                scores=scores))
            before = current if current is not None else np.zeros(dim, np.float32)
            state.log.append(UpdateLogEntry(
                user_id=hist.user_id, session_id=session.session_id,
                delta_norm=float(np.linalg.norm(nxt - before))))
            current = nxt
        if current is not None:
            state.states[hist.user_id] = current

    if audit:
        _audit(params, histories, predictions, initial)
    return predictions, state


def _audit(params: ModelParams, histories, predictions, initial_states,
           tol: float = 1e-6) -> None:
    """Recompute every score offline and compare against the replay."""
    by_key = {(p.user_id, p.session_id): p.scores for p in predictions}
    for hist in histories:
        offline, _ = listwise_scores(params, hist,
                                     initial_state=initial_states.get(hist.user_id))
        for session, ref in zip(hist.sessions, offline):
            got = by_key[(hist.user_id, session.session_id)]
            gap = float(np.max(np.abs(got - ref))) if ref.size else 0.0
            if gap > tol:
                raise ValueError(
                    f"audit failed at user {hist.user_id}, session "
                    f"{session.session_id}: replay differs from offline "
                    f"by {gap:.3e} (tolerance {tol:g})")
