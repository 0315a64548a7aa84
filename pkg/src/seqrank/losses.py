"""Training objectives: pairwise cross-entropy, reward, TD, PG, and blends.

The supervised path scores a sampled item pair per session and applies the
sigmoid cross-entropy to the score difference.  The actor-critic path reuses
that quantity, negated, as a per-session reward and fits the critic to a
weakened Bellman recursion whose value beyond a user's last session is
pinned to zero; a policy-gradient term pushes the critic's cumulative value
up, which is what anchors the otherwise under-determined TD residuals.

Scalar float oracles (`pairwise_logloss`, `reward`, `td_loss`, `pg_loss`)
mirror the tape-based builders used in training so tests can replay either
side against the other.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .models import ModelDims, TrajectoryTensors

OPTIMIZERS = ("sgd", "adam")


@dataclass
class TrainConfig:
    gamma: float = 0.8          # discount on successor critic values
    mu: float = 0.5             # weight on the PG term; (1 - mu) goes to TD
    alpha: float = 0.05         # learning rate
    batch_users: int = 32
    max_epochs: int = 30
    patience: int = 3           # epochs without validation improvement
    seed: int = 0
    optimizer: str = "sgd"
    allow_degenerate_mu: bool = False
    packed: bool = True
    warm_start: bool = True     # seed s3ddpg from the trained rnn in ladders
    val_fraction: float = 0.2
    warmup_days: int = 7        # history window replayed before final-day eval
    dims: ModelDims = field(default_factory=ModelDims)

    def validate(self) -> None:
        if not (0.0 <= self.gamma < 1.0):
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma!r}")
        if not (0.0 <= self.mu <= 1.0):
            raise ValueError(f"mu must lie in [0, 1], got {self.mu!r}")
        _check_mu(self.mu, self.allow_degenerate_mu)
        if self.alpha <= 0.0:
            raise ValueError(f"alpha must be positive, got {self.alpha!r}")
        if self.batch_users < 1:
            raise ValueError("batch_users must be at least 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be at least 1")
        if self.patience < 0:
            raise ValueError("patience must be non-negative")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(
                f"unknown optimizer {self.optimizer!r}, expected one of {OPTIMIZERS}")
        if not (0.0 < self.val_fraction < 1.0):
            raise ValueError(
                f"val_fraction must lie in (0, 1), got {self.val_fraction!r}")
        if self.warmup_days < 1:
            raise ValueError("warmup_days must be at least 1")


def _check_mu(mu: float, allow: bool) -> None:
    if mu == 1.0 and not allow:
        raise ValueError(
            "mu=1 drops the TD term entirely and training degenerates (the "
            "critic is never anchored to rewards); set allow_degenerate_mu "
            "to run it anyway")


# ---------------------------------------------------------------------------
# scalar oracles
# ---------------------------------------------------------------------------

def pairwise_logloss(eta: float, lam: float) -> float:
    """-lam*log(sig(eta)) - (1-lam)*log(1-sig(eta)) for a binary label."""
    lam = float(lam)
    if lam not in (0.0, 1.0):
        raise ValueError(
            f"pair label must be exactly 0 or 1, got {lam!r}; labels like "
            "this arise when both items of a pair carry the same label")
    eta = float(eta)
    if not math.isfinite(eta):
        raise ValueError(f"pairwise_logloss: eta must be finite, got {eta!r}")
    return ad.softplus(-eta) if lam == 1.0 else ad.softplus(eta)


def reward(eta: float, lam: float) -> float:
    """The negated pairwise loss -- literally the same code path, negated."""
    return -pairwise_logloss(eta, lam)


def td_loss(q_values, rewards, gamma: float, target_q) -> float:
    """Squared Bellman residuals summed over users and non-final sessions.

    Each argument is a per-user list of equal-length sequences covering the
    whole trajectory.  Session ``t`` of a user with ``T`` sessions
    contributes ``(q[t] - r[t] - gamma * succ)**2`` for ``t < T - 1``, where
    ``succ`` is the target value of session ``t + 1`` -- except past the end
    of the horizon: the value after the last session is literally zero, so
    the final residual reduces to ``q[T-2] - r[T-2]``.  Single-session users
    contribute nothing.
    """
    if not (len(q_values) == len(rewards) == len(target_q)):
        raise ValueError("td_loss: per-user lists must have equal lengths")
    total = 0.0
    for u, (q, r, tq) in enumerate(zip(q_values, rewards, target_q)):
        if not (len(q) == len(r) == len(tq)):
            raise ValueError(
                f"td_loss: user {u} trajectory lengths disagree "
                f"({len(q)}, {len(r)}, {len(tq)})")
        n = len(q)
        for t in range(n - 1):
            succ = float(tq[t + 1]) if t + 1 < n - 1 else 0.0
            resid = float(q[t]) - float(r[t]) - gamma * succ
            total += resid * resid
    return total


def pg_loss(q_values) -> float:
    """Negated cumulative critic value; minimizing it maximizes the sum."""
    return -sum(float(q) for user in q_values for q in user)


def bellman_rollup(rewards, gamma: float) -> np.ndarray:
    """The q-trajectory that zeroes every TD residual for given rewards."""
    r = np.asarray(rewards, dtype=np.float64)
    q = np.zeros_like(r)
    for t in range(r.size - 2, -1, -1):
        q[t] = r[t] + gamma * q[t + 1]
    return q


# ---------------------------------------------------------------------------
# tape builders
# ---------------------------------------------------------------------------

def _const_scalar(value: float, like: Tensor) -> Tensor:
    return Tensor.const(np.full((1, 1), value, dtype=like.dtype))


def td_loss_graph(traj: TrajectoryTensors, gamma: float) -> Tensor:
    """TD loss as a tape node over the recorded batch trajectories.

    Live critic values and live rewards stay differentiable; successor
    values enter as constants (they were computed by the target critic
    outside the tape).
    """
    residuals = []
    for user in traj.per_user:
        n = len(user)
        for t in range(n - 1):
            rec = user[t]
            if rec.q is None:
                raise ValueError("td_loss_graph: trajectory has no critic values")
            succ = user[t + 1].q_target if t + 1 < n - 1 else 0.0
            if succ is None:
                raise ValueError("td_loss_graph: missing target critic value")
            shifted = ad.sub(rec.q, rec.reward)
            residuals.append(ad.sub(shifted, _const_scalar(gamma * succ, rec.q)))
    if not residuals:
        first = next(traj.steps(), None)
        dtype = first.reward.dtype if first is not None else np.float32
        return Tensor.const(np.zeros((1, 1), dtype=dtype))
    return ad.sum_all(ad.square(ad.vstack(residuals)))


def pg_loss_graph(traj: TrajectoryTensors) -> Tensor:
    qs = []
    for rec in traj.steps():
        if rec.q is None:
            raise ValueError("pg_loss_graph: trajectory has no critic values")
        qs.append(rec.q)
    if not qs:
        raise ValueError("pg_loss_graph: empty batch")
    return ad.neg(ad.sum_all(ad.vstack(qs)))


def combined_objective(traj: TrajectoryTensors, config: TrainConfig) -> Tensor:
    """mu-weighted blend of the PG and TD terms for the actor-critic variant."""
    _check_mu(config.mu, config.allow_degenerate_mu)
    pg = pg_loss_graph(traj)
    td = td_loss_graph(traj, config.gamma)
    return ad.add(ad.scale(pg, config.mu), ad.scale(td, 1.0 - config.mu))


def supervised_objective(traj: TrajectoryTensors) -> Tensor:
    """Mean pairwise cross-entropy over every sampled pair in the batch."""
    losses = [ad.neg(rec.reward) for rec in traj.steps()]
    if not losses:
        raise ValueError("supervised_objective: empty batch")
    return ad.scale(ad.sum_all(ad.vstack(losses)), 1.0 / len(losses))
