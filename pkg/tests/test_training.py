import dataclasses

import numpy as np
import pytest

from seqrank import training
from seqrank.datamodel import GeneratorConfig, filter_training_eligible, generate_log
from seqrank.losses import TrainConfig
from seqrank.metrics import evaluate_protocol
from seqrank.models import ModelDims, VARIANTS, init_model, save_checkpoint
from seqrank.packing import pairwise_sample
from seqrank.training import (ladder, split_train_val, sweep_mu, train,
                              _train_warm_started)

from test_models import DIMS


def _splits(seed=0, users=24):
    cfg = GeneratorConfig(users=users, days=4, sessions_mean=2.0, sessions_max=5,
                          items_mean=6.0, items_max=10, feature_width=5,
                          latent_dim=2, n_items=DIMS.vocab_items,
                          n_categories=DIMS.vocab_categories,
                          n_shops=DIMS.vocab_shops, n_brands=DIMS.vocab_brands,
                          longterm_len=6, seed=seed)
    hists = generate_log(cfg)
    cut = (3 * users) // 4
    return hists[:cut], hists[cut:]


def _config(**overrides):
    dims = dataclasses.replace(DIMS, feature_width=5, query_feat=2)
    base = dict(alpha=0.05, batch_users=8, max_epochs=2, patience=0,
                seed=7, warmup_days=3, dims=dims)
    base.update(overrides)
    return TrainConfig(**base)


def test_split_train_val_partitions_users():
    tr, va = _splits()
    combined = tr + va
    a, b = split_train_val(combined, 0.25)
    assert a + b == combined and len(b) == round(len(combined) * 0.25)
    with pytest.raises(ValueError, match="val_fraction"):
        split_train_val(combined, 1.0)
    with pytest.raises(ValueError, match="at least 2"):
        split_train_val(combined[:1], 0.5)


def test_unknown_variant_rejected():
    tr, va = _splits()
    with pytest.raises(ValueError, match="unknown variant"):
        train("gbdt", tr, va, _config())


def test_empty_training_split_rejected():
    tr, va = _splits()
    with pytest.raises(ValueError, match="eligible"):
        train("dnn", [], va, _config())


def test_history_leads_with_init_eval():
    tr, va = _splits()
    result = train("dnn", tr, va, _config(max_epochs=2, patience=2))
    first = result.history[0]
    assert first.epoch == 0 and first.mean_loss is None and first.pairs == 0
    assert len(result.history) == result.epochs_run + 1
    for log in result.history[1:]:
        assert np.isfinite(log.mean_loss)


def test_patience_zero_runs_exactly_one_epoch():
    tr, va = _splits()
    result = train("dnn", tr, va, _config(max_epochs=9, patience=0))
    assert result.epochs_run == 1
    assert len(result.history) == 2


def test_best_params_reproduce_best_report():
    tr, va = _splits(seed=3)
    cfg = _config(max_epochs=3, patience=3)
    result = train("rnn", tr, va, cfg)
    aucs = [log.report.session_auc for log in result.history]
    assert result.best_auc == max(aucs)
    assert result.best_epoch == int(np.argmax(aucs))   # first maximizer wins
    rerun = evaluate_protocol(result.params, va, cfg.warmup_days)
    assert rerun.session_auc == result.best_auc


def test_early_stop_waits_out_patience():
    tr, va = _splits(seed=5)
    cfg = _config(max_epochs=6, patience=1)
    result = train("dnn", tr, va, cfg)
    if result.epochs_run < cfg.max_epochs:
        assert result.epochs_run - result.best_epoch >= cfg.patience
    # best checkpoint dominates everything after it, by construction of "best"
    tail = [log.report.session_auc for log in result.history[result.best_epoch:]]
    assert all(result.best_auc >= a for a in tail)


def test_identical_runs_identical_checkpoint_bytes(tmp_path):
    tr, va = _splits(seed=1)
    cfg = _config(max_epochs=2, patience=2, seed=11)
    paths = []
    for tag in ("a", "b"):
        result = train("s3ddpg", tr, va, cfg)
        p = tmp_path / f"run_{tag}.ckpt"
        save_checkpoint(result.params, p)
        paths.append(p)
    assert paths[0].read_bytes() == paths[1].read_bytes()

    other = train("s3ddpg", tr, va, dataclasses.replace(cfg, seed=12))
    p = tmp_path / "run_c.ckpt"
    save_checkpoint(other.params, p)
    assert p.read_bytes() != paths[0].read_bytes()


@pytest.mark.parametrize("variant", ["rnn", "s3ddpg"])
def test_packed_epoch_matches_unpacked_epoch(variant):
    tr, va = _splits(seed=2)
    cfg = _config(max_epochs=1, patience=0, seed=4)
    packed = train(variant, tr, va, dataclasses.replace(cfg, packed=True))
    plain = train(variant, tr, va, dataclasses.replace(cfg, packed=False))
    assert packed.params.store.allclose(plain.params.store, atol=1e-6)
    if variant == "s3ddpg":
        assert packed.params.target.allclose(plain.params.target, atol=1e-6)


def test_pair_accounting_matches_eligible_session_count():
    tr, va = _splits(seed=6)
    expected = sum(len(h.sessions) for h in filter_training_eligible(tr))
    result = train("din-s", tr, va, _config(max_epochs=2, patience=2))
    for log in result.history[1:]:
        assert log.pairs == expected


def test_divergence_reports_epoch_and_batch(monkeypatch):
    tr, va = _splits(seed=8)

    def poisoned(variant, dims, rng):
        params = init_model(variant, dims, rng)
        params.store["actor.0.w"].data[0, 0] = np.nan
        return params

    monkeypatch.setattr(training, "init_model", poisoned)
    with pytest.raises(RuntimeError, match=r"diverged.*epoch 1, batch 0"):
        train("dnn", tr, va, _config())


def test_sampling_stream_unaffected_by_variant_init(monkeypatch):
    # dnn and rnn consume the init stream differently; the drawn pairs must
    # not notice, or data order would depend on the model being trained
    tr, va = _splits(seed=9)
    drawn = {}

    current = {"variant": None}

    def recording(labels, rng):
        pair = pairwise_sample(labels, rng)
        drawn.setdefault(current["variant"], []).append(pair)
        return pair

    monkeypatch.setattr(training, "pairwise_sample", recording)
    for variant in ("dnn", "rnn"):
        current["variant"] = variant
        train(variant, tr, va, _config(max_epochs=1, patience=0, seed=13))
    assert drawn["dnn"] == drawn["rnn"]
    assert len(drawn["dnn"]) > 0


def test_sweep_mu_emits_one_row_per_value():
    tr, va = _splits(seed=10)
    cfg = _config(max_epochs=1, patience=0)
    rows = sweep_mu([0.0, 0.5, 0.99], tr, va, cfg)
    assert [r.mu for r in rows] == [0.0, 0.5, 0.99]
    for r in rows:
        assert np.isfinite(r.session_auc) and 0.0 <= r.session_roc <= 1.0


def test_sweep_mu_rejects_degenerate_value_up_front():
    tr, va = _splits(seed=10)
    with pytest.raises(ValueError, match="mu"):
        sweep_mu([0.2, 1.0], tr, va, _config(max_epochs=1))


def test_sweep_mu_degenerate_opt_in():
    tr, va = _splits(seed=10)
    cfg = _config(max_epochs=1, patience=0, allow_degenerate_mu=True)
    rows = sweep_mu([1.0], tr, va, cfg)
    assert len(rows) == 1 and rows[0].mu == 1.0


def test_ladder_covers_all_variants_with_warm_start():
    tr, va = _splits(seed=14)
    cfg = _config(max_epochs=1, patience=0, warm_start=True)
    rows, results = ladder(tr, va, cfg)
    assert [r.variant for r in rows] == list(VARIANTS)
    assert set(results) == set(VARIANTS)
    flags = {r.variant: r.warm_started for r in rows}
    assert flags == {"dnn": False, "din-s": False, "rnn": False, "s3ddpg": True}
    # scoring ignores the critic, so the warm-started run begins exactly
    # where the donor recurrent model left off
    s3 = next(r for r in rows if r.variant == "s3ddpg")
    rnn = next(r for r in rows if r.variant == "rnn")
    assert s3.init_auc == rnn.session_auc


def test_ladder_cold_start_flag():
    tr, va = _splits(seed=14)
    cfg = _config(max_epochs=1, patience=0, warm_start=False)
    rows, _ = ladder(tr, va, cfg, variants=("rnn", "s3ddpg"))
    assert [r.warm_started for r in rows] == [False, False]


def test_warm_start_requires_recurrent_donor():
    tr, va = _splits(seed=14)
    donor = init_model("dnn", _config().dims, np.random.default_rng(0))
    with pytest.raises(ValueError, match="rnn donor"):
        _train_warm_started(tr, va, _config(), donor)


def test_mu_sweep_direction_is_mostly_monotone():
    # frozen regression: on three fixed seeds of a mid-sized drifting log,
    # pushing weight between the two objective terms moves held-out session
    # AUC monotonically on at least two of the three (calibrated once at
    # this exact scale; seed 1 is the known non-monotone draw)
    data = GeneratorConfig(users=300, days=8, sessions_mean=7.0,
                           sessions_max=24, items_mean=8.0, items_max=24,
                           drift=0.1, query_temp=1.0, query_noise=0.5,
                           in_category_frac=0.8, affinity_scale=4.0,
                           longterm_len=4)
    base = TrainConfig(optimizer="adam", alpha=0.01, max_epochs=4, patience=4,
                       warmup_days=7, dims=ModelDims())
    monotone = 0
    for seed in (0, 1, 2):
        hists = generate_log(dataclasses.replace(data, seed=seed))
        tr, va = split_train_val(hists, base.val_fraction)
        rows = sweep_mu([0.2, 0.5, 0.8],
                        tr, va, dataclasses.replace(base, seed=seed))
        a = [r.session_auc for r in rows]
        monotone += (a[0] < a[1] < a[2]) or (a[0] > a[1] > a[2])
    assert monotone >= 2
