import numpy as np
import pytest

import seqrank.autodiff as ad
import seqrank.numcore as nc
from seqrank.autodiff import Tensor
from seqrank.losses import (
    TrainConfig,
    bellman_rollup,
    combined_objective,
    pairwise_logloss,
    pg_loss,
    pg_loss_graph,
    reward,
    supervised_objective,
    td_loss,
    td_loss_graph,
)
from seqrank.models import ModelParams, StepRecord, TrajectoryTensors, forward_pairs, init_model

from test_models import DIMS, _batch


# ---------------------------------------------------------------------------
# scalar oracles
# ---------------------------------------------------------------------------

def test_pairwise_logloss_frozen_values():
    assert abs(pairwise_logloss(0.0, 1.0) - 0.6931471805599453) < 1e-15
    assert abs(pairwise_logloss(-1.0, 1.0) - 1.3132616875182228) < 1e-15
    assert abs(pairwise_logloss(-1.0, 0.0) - 0.3132616875182228) < 1e-15
    assert pairwise_logloss(40.0, 1.0) < 1e-15
    assert pairwise_logloss(0.0, 0.0) == pairwise_logloss(0.0, 1.0)


def test_pairwise_logloss_monotone_in_logit():
    grid = np.linspace(-30, 30, 301)
    pos = [pairwise_logloss(x, 1.0) for x in grid]
    neg = [pairwise_logloss(x, 0.0) for x in grid]
    assert all(a > b for a, b in zip(pos, pos[1:]))
    assert all(a < b for a, b in zip(neg, neg[1:]))


def test_pairwise_logloss_rejects_soft_labels_and_nonfinite():
    with pytest.raises(ValueError, match="0 or 1"):
        pairwise_logloss(0.3, 0.5)
    with pytest.raises(ValueError, match="finite"):
        pairwise_logloss(float("nan"), 1.0)


def test_reward_is_bitwise_negated_loss():
    rng = np.random.default_rng(1)
    for _ in range(200):
        eta = float(rng.normal() * 10.0 ** float(rng.integers(-2, 3)))
        lam = float(rng.integers(0, 2))
        assert reward(eta, lam) + pairwise_logloss(eta, lam) == 0.0
    assert reward(0.0, 1.0) == -0.6931471805599453


def test_td_loss_single_session_user_contributes_nothing():
    assert td_loss([[-2.3]], [[-0.4]], 0.8, [[-1.0]]) == 0.0


def test_td_loss_zero_on_discounted_rollup():
    # the trajectory from the rollup: q = (-1.06, -0.7, 0) for r = (-0.5, -0.7, *)
    r = [-0.5, -0.7, -9.9]
    q = bellman_rollup(r, 0.8)
    assert abs(q[0] - -1.06) < 1e-12 and q[1] == -0.7 and q[2] == 0.0
    assert td_loss([q], [r], 0.8, [q]) <= 1e-12


def test_td_loss_zero_on_rollup_property():
    rng = np.random.default_rng(7)
    for _ in range(50):
        r = -rng.exponential(1.0, size=rng.integers(1, 21))
        q = bellman_rollup(r, 0.8)
        assert td_loss([q], [r], 0.8, [q]) <= 1e-12


def test_td_loss_gamma_zero_is_plain_square_error():
    rng = np.random.default_rng(8)
    q = rng.normal(size=6)
    r = rng.normal(size=6)
    expect = float(((q[:-1] - r[:-1]) ** 2).sum())
    assert abs(td_loss([q], [r], 0.0, [rng.normal(size=6)]) - expect) < 1e-12


def test_td_loss_final_residual_ignores_target():
    # two sessions: the only residual is (q0 - r0)^2, successor pinned to 0
    got = td_loss([[-1.0, 5.0]], [[-0.25, -4.0]], 0.8, [[100.0, 100.0]])
    assert abs(got - (-1.0 + 0.25) ** 2) < 1e-15


def test_td_loss_rejects_mismatched_lengths():
    with pytest.raises(ValueError, match="equal lengths"):
        td_loss([[1.0]], [[1.0], [2.0]], 0.8, [[1.0]])
    with pytest.raises(ValueError, match="user 0"):
        td_loss([[1.0, 2.0]], [[1.0]], 0.8, [[1.0, 2.0]])


def test_pg_loss_is_negated_sum():
    assert pg_loss([[-1.0, -2.0]]) == 3.0
    assert pg_loss([[0.0], [0.0, 0.0]]) == 0.0
    assert pg_loss([]) == 0.0


# ---------------------------------------------------------------------------
# tape builders against the oracles
# ---------------------------------------------------------------------------

def _fake_traj(q_by_user, rewards_by_user, targets_by_user):
    users = []
    for u, (qs, rs, ts) in enumerate(zip(q_by_user, rewards_by_user, targets_by_user)):
        recs = []
        for t, (q, r, tq) in enumerate(zip(qs, rs, ts)):
            recs.append(StepRecord(
                user_id=u, session_id=t, pair=(0, 1), lam=1.0,
                eta=Tensor.const(np.zeros((1, 1))),
                reward=Tensor.const(np.full((1, 1), r)),
                q=Tensor.const(np.full((1, 1), q)),
                q_target=tq))
        users.append(recs)
    return TrajectoryTensors(per_user=users)


def test_combined_objective_arithmetic():
    # L_PG = 2, L_TD = 4 at mu = 0.5 blends to 3
    traj = _fake_traj([[-2.0, 0.0]], [[0.0, 0.0]], [[0.0, 0.0]])
    assert pg_loss_graph(traj).item() == 2.0
    assert td_loss_graph(traj, 0.8).item() == 4.0
    cfg = TrainConfig(mu=0.5, gamma=0.8)
    assert combined_objective(traj, cfg).item() == 3.0
    assert combined_objective(traj, TrainConfig(mu=0.0)).item() == 4.0


def test_combined_objective_rejects_degenerate_mu():
    traj = _fake_traj([[-1.0]], [[-0.5]], [[0.0]])
    with pytest.raises(ValueError, match="degenerate"):
        combined_objective(traj, TrainConfig(mu=1.0))
    cfg = TrainConfig(mu=1.0, allow_degenerate_mu=True)
    assert combined_objective(traj, cfg).item() == 1.0


def test_graph_losses_match_scalar_oracles_on_real_forward():
    rng = np.random.default_rng(21)
    batch, pairs = _batch(rng, [[3, 2, 2], [4], [2, 3]])
    m = init_model("s3ddpg", DIMS, np.random.default_rng(5))
    traj = forward_pairs(m, batch, pairs)
    q = [[r.q.item() for r in user] for user in traj.per_user]
    rw = [[r.reward.item() for r in user] for user in traj.per_user]
    tq = [[r.q_target for r in user] for user in traj.per_user]
    assert np.isclose(td_loss_graph(traj, 0.8).item(), td_loss(q, rw, 0.8, tq),
                      rtol=1e-5, atol=1e-7)
    assert np.isclose(pg_loss_graph(traj).item(), pg_loss(q), rtol=1e-6)
    brute = np.mean([pairwise_logloss(r.eta.item(), r.lam) for r in traj.steps()])
    assert np.isclose(supervised_objective(traj).item(), brute, rtol=1e-5)


def test_graph_losses_require_critic_records():
    rng = np.random.default_rng(22)
    batch, pairs = _batch(rng, [[2, 2]])
    traj = forward_pairs(init_model("rnn", DIMS, np.random.default_rng(0)),
                         batch, pairs)
    with pytest.raises(ValueError, match="critic"):
        td_loss_graph(traj, 0.8)
    with pytest.raises(ValueError, match="critic"):
        pg_loss_graph(traj)


def test_supervised_objective_rejects_empty_batch():
    with pytest.raises(ValueError, match="empty"):
        supervised_objective(TrajectoryTensors(per_user=[]))


def test_combined_objective_gradients_check_out():
    """Finite differences through the mu-blend on desk-scale models, 20 seeds."""
    rng = np.random.default_rng(23)
    cfg = TrainConfig(mu=0.4, gamma=0.8)
    for seed in range(20):
        batch, pairs = _batch(rng, [[2, 2], [2]])
        proto = init_model("s3ddpg", DIMS, np.random.default_rng(seed))
        target = proto.target

        def loss_fn(store):
            m = ModelParams(variant="s3ddpg", dims=DIMS, store=store, target=target)
            return combined_objective(forward_pairs(m, batch, pairs, packed=False),
                                      cfg)

        err = nc.grad_check(loss_fn, proto.store, epsilon=1e-5,
                            max_entries_per_block=2,
                            rng=np.random.default_rng(seed + 100))
        assert err < 1e-4, f"seed {seed}: {err}"


def test_supervised_objective_gradients_check_out():
    rng = np.random.default_rng(24)
    for seed in range(20):
        batch, pairs = _batch(rng, [[2, 3]])
        variant = ("dnn", "din-s", "rnn")[seed % 3]
        proto = init_model(variant, DIMS, np.random.default_rng(seed))

        def loss_fn(store):
            m = ModelParams(variant=variant, dims=DIMS, store=store, target=None)
            return supervised_objective(forward_pairs(m, batch, pairs, packed=False))

        err = nc.grad_check(loss_fn, proto.store, epsilon=1e-5,
                            max_entries_per_block=2,
                            rng=np.random.default_rng(seed + 200))
        assert err < 1e-4, f"{variant} seed {seed}: {err}"


# ---------------------------------------------------------------------------
# config validation
# ---------------------------------------------------------------------------

def test_train_config_defaults_validate():
    TrainConfig().validate()


@pytest.mark.parametrize("kwargs,fragment", [
    (dict(gamma=1.0), "gamma"),
    (dict(gamma=-0.1), "gamma"),
    (dict(mu=1.5), "mu"),
    (dict(mu=-0.5), "mu"),
    (dict(mu=1.0), "degenerate"),
    (dict(alpha=0.0), "alpha"),
    (dict(batch_users=0), "batch_users"),
    (dict(max_epochs=0), "max_epochs"),
    (dict(patience=-1), "patience"),
    (dict(optimizer="rmsprop"), "optimizer"),
    (dict(val_fraction=0.0), "val_fraction"),
    (dict(val_fraction=1.0), "val_fraction"),
    (dict(warmup_days=0), "warmup_days"),
])
def test_train_config_rejects_bad_fields(kwargs, fragment):
    with pytest.raises(ValueError, match=fragment):
        TrainConfig(**kwargs).validate()


def test_train_config_degenerate_mu_override():
    TrainConfig(mu=1.0, allow_degenerate_mu=True).validate()
