"""Training drivers: the epoch loop, the mu sweep, and the variant ladder.

One training pair is drawn per eligible session per epoch (a purchased item
against a non-purchased one), so an epoch touches exactly the sum of the
users' eligible-session counts.  Three independently seeded rng streams
keep concerns apart: data order, pair sampling, and parameter init -- a
different init seed must never change which pairs are drawn.

Early stopping watches the validation session AUC; the best-scoring
parameters (the untouched initialization counts as epoch 0) are what comes
back.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .datamodel import UserHistory, filter_training_eligible, make_batches
from .losses import TrainConfig, combined_objective, supervised_objective
from .metrics import MetricsReport, evaluate_protocol
from .models import ModelParams, VARIANTS, forward_pairs, init_model, sync_target
from .packing import pairwise_sample


@dataclass
class EpochLog:
    epoch: int                  # 0 is the untrained initialization
    mean_loss: float | None
    pairs: int
    report: MetricsReport


@dataclass
class RunState:
    """Mutable bookkeeping for one fit: rng streams plus stopping counters."""
    data_rng: np.random.Generator
    sample_rng: np.random.Generator
    init_rng: np.random.Generator
    epoch: int = 0
    best_auc: float = -np.inf
    best_epoch: int = 0
    epochs_since_best: int = 0
    checkpoint_path: str | None = None


@dataclass
class TrainResult:
    params: ModelParams
    best_epoch: int
    best_auc: float
    epochs_run: int
    history: list[EpochLog]

    @property
    def best_report(self) -> MetricsReport:
        return self.history[self.best_epoch].report


def _copy_params(params: ModelParams) -> ModelParams:
    return ModelParams(variant=params.variant, dims=params.dims,
                       store=params.store.copy(),
                       target=None if params.target is None
                       else params.target.copy())


def _draw_pairs(batch: list[UserHistory], rng: np.random.Generator):
    return [[pairwise_sample(s.labels(), rng) for s in hist.sessions]
            for hist in batch]


def split_train_val(histories: list[UserHistory], val_fraction: float
                    ) -> tuple[list[UserHistory], list[UserHistory]]:
    """Deterministic by-user split: the last ``val_fraction`` of users hold out."""
    if not (0.0 < val_fraction < 1.0):
        raise ValueError(f"val_fraction must lie in (0, 1), got {val_fraction!r}")
    if len(histories) < 2:
        raise ValueError("need at least 2 users to split off a validation set")
    n_val = min(max(1, round(len(histories) * val_fraction)), len(histories) - 1)
    return histories[:-n_val], histories[-n_val:]


def _fresh_run_state(seed: int) -> RunState:
    data, sample, init = (np.random.default_rng(s)
                          for s in np.random.SeedSequence(seed).spawn(3))
    return RunState(data_rng=data, sample_rng=sample, init_rng=init)


def train(variant: str, train_histories: list[UserHistory],
          val_histories: list[UserHistory], config: TrainConfig) -> TrainResult:
    """Fit one variant, early-stopping on validation session AUC.

    Users are shuffled every epoch and grouped into minibatches; every
    eligible session contributes one freshly sampled pair.  A non-finite
    loss aborts with the epoch and batch where it appeared.  The result
    carries the best parameters by validation session AUC together with the
    full per-epoch metric history (entry 0 being the initialization).
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}, expected one of {VARIANTS}")
    config.validate()
    run = _fresh_run_state(config.seed)
    params = init_model(variant, config.dims, run.init_rng)
    return _fit(params, train_histories, val_histories, config, run)


def _fit(params: ModelParams, train_histories, val_histories,
         config: TrainConfig, run: RunState) -> TrainResult:
    eligible = filter_training_eligible(train_histories)
    if not eligible:
        raise ValueError("no training-eligible sessions in the training split")
    optimizer = nc.OptimizerState(lr=config.alpha, rule=config.optimizer)

    report0 = evaluate_protocol(params, val_histories, config.warmup_days)
    history = [EpochLog(epoch=0, mean_loss=None, pairs=0, report=report0)]
    best = _copy_params(params)
    run.best_auc = report0.session_auc

    expected_pairs = sum(len(h.sessions) for h in eligible)
    for epoch in range(1, config.max_epochs + 1):
        run.epoch = epoch
        order = run.data_rng.permutation(len(eligible))
        shuffled = [eligible[i] for i in order]
        losses = []
        epoch_pairs = 0
        for b, batch in enumerate(make_batches(shuffled, config.batch_users)):
            pairs = _draw_pairs(batch, run.sample_rng)
            traj = forward_pairs(params, batch, pairs, packed=config.packed)
            if params.variant == "s3ddpg":
                loss = combined_objective(traj, config)
            else:
                loss = supervised_objective(traj)
            value = loss.item()
            if not np.isfinite(value):
                raise RuntimeError(
                    f"training diverged: non-finite loss {value!r} at "
                    f"epoch {epoch}, batch {b}")
            params.store.zero_grads()
            loss.backward()
            nc.optimizer_step(params.store, optimizer)
            if params.target is not None:
                sync_target(params)
            losses.append(value)
            epoch_pairs += traj.count()
        if epoch_pairs != expected_pairs:
            raise RuntimeError(
                f"epoch {epoch} processed {epoch_pairs} pairs, expected "
                f"{expected_pairs}")

        report = evaluate_protocol(params, val_histories, config.warmup_days)
        history.append(EpochLog(epoch=epoch, mean_loss=float(np.mean(losses)),
                                pairs=epoch_pairs, report=report))
        if report.session_auc > run.best_auc:
            run.best_auc = report.session_auc
            run.best_epoch = epoch
            run.epochs_since_best = 0
            best = _copy_params(params)
        else:
            run.epochs_since_best += 1
        if run.epochs_since_best >= config.patience:
            break

    return TrainResult(params=best, best_epoch=run.best_epoch,
                       best_auc=run.best_auc, epochs_run=run.epoch,
                       history=history)


# ---------------------------------------------------------------------------
# experiment drivers
# ---------------------------------------------------------------------------

@dataclass
class SweepRow:
    mu: float
    session_auc: float
    session_roc: float
    ndcg: float | None
    best_epoch: int


def sweep_mu(values, train_histories, val_histories,
             config: TrainConfig) -> list[SweepRow]:
    """Train the actor-critic variant once per mu, sharing every seed."""
    values = [float(v) for v in values]
    for v in values:
        # reject a bad mu before any training time is spent on the others
        dataclasses.replace(config, mu=v).validate()
    rows = []
    for v in values:
        cfg = dataclasses.replace(config, mu=v)
        result = train("s3ddpg", train_histories, val_histories, cfg)
        rep = result.best_report
        rows.append(SweepRow(mu=v, session_auc=rep.session_auc,
                             session_roc=rep.session_roc, ndcg=rep.ndcg,
                             best_epoch=result.best_epoch))
    return rows


@dataclass
class LadderRow:
    variant: str
    session_auc: float
    session_roc: float
    ndcg: float | None
    init_auc: float
    best_epoch: int
    warm_started: bool


def ladder(train_histories, val_histories, config: TrainConfig,
           variants=VARIANTS) -> tuple[list[LadderRow], dict[str, TrainResult]]:
    """Train every variant on the same data and report them side by side.

    With ``config.warm_start`` the actor-critic run copies all shared blocks
    (embeddings, attention, encoder, recurrence, actor) from the trained
    recurrent model before adding its critic; otherwise it starts cold.
    """
    for variant in variants:
        if variant not in VARIANTS:
            raise ValueError(
                f"unknown variant {variant!r}, expected one of {VARIANTS}")
    rows = []
    results: dict[str, TrainResult] = {}
    for variant in variants:
        if variant == "s3ddpg" and config.warm_start and "rnn" in results:
            result = _train_warm_started(train_histories, val_histories,
                                         config, results["rnn"].params)
            warm = True
        else:
            result = train(variant, train_histories, val_histories, config)
            warm = False
        results[variant] = result
        rep = result.best_report
        rows.append(LadderRow(
            variant=variant, session_auc=rep.session_auc,
            session_roc=rep.session_roc, ndcg=rep.ndcg,
            init_auc=result.history[0].report.session_auc,
            best_epoch=result.best_epoch, warm_started=warm))
    return rows, results


def _train_warm_started(train_histories, val_histories, config: TrainConfig,
                        donor: ModelParams) -> TrainResult:
    """Fit the actor-critic model starting from a trained recurrent one.

    Only the critic (and its target copy) starts fresh; every block the two
    variants share is copied from the donor.  The data and sampling streams
    are spawned exactly as in a cold run, so the same pairs are drawn.
    """
    if donor.variant != "rnn":
        raise ValueError(f"warm start needs an rnn donor, got {donor.variant!r}")
    config.validate()
    run = _fresh_run_state(config.seed)
    params = init_model("s3ddpg", config.dims, run.init_rng)
    for name, tensor in donor.store.items():
        params.store[name].data[...] = tensor.data
    sync_target(params)
    return _fit(params, train_histories, val_histories, config, run)
