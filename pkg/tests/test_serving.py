import dataclasses

import numpy as np
import pytest

from seqrank.models import init_model, listwise_scores, score_one_session
from seqrank.serving import (ServingState, load_serving_state, save_serving_state,
                             serve_replay, _audit)

from test_models import DIMS, make_history
from test_training import _splits


def _model(variant="rnn", seed=0, dims=DIMS):
    return init_model(variant, dims, np.random.default_rng(seed))


def _gen_model(variant="rnn", seed=0):
    dims = dataclasses.replace(DIMS, feature_width=5, query_feat=2)
    return init_model(variant, dims, np.random.default_rng(seed))


def test_feedforward_checkpoints_rejected():
    for variant in ("dnn", "din-s"):
        with pytest.raises(ValueError, match="recurrent"):
            serve_replay(_model(variant), [])


def test_new_user_starts_from_zero_state():
    rng = np.random.default_rng(1)
    hist = make_history(rng, uid=0, lengths=[4, 3])
    params = _model()
    preds, _ = serve_replay(params, [hist])
    cold, _ = score_one_session(params, hist, hist.sessions[0], None)
    assert np.array_equal(preds[0].scores, cold)


@pytest.mark.parametrize("variant", ["rnn", "s3ddpg"])
def test_replay_equals_offline_forward_exactly(variant):
    tr, va = _splits(seed=4)
    params = _gen_model(variant, seed=2)
    preds, state = serve_replay(params, va, audit=True)
    i = 0
    for hist in va:
        offline, final = listwise_scores(params, hist)
        for session, ref in zip(hist.sessions, offline):
            assert preds[i].user_id == hist.user_id
            assert preds[i].session_id == session.session_id
            assert np.array_equal(preds[i].scores, ref)
            i += 1
        assert np.array_equal(state.states[hist.user_id], final.ravel())
    assert i == len(preds)


def test_purchase_free_session_logs_zero_delta():
    rng = np.random.default_rng(3)
    hist = make_history(rng, uid=7, lengths=[3, 3, 3])
    quiet = dataclasses.replace(
        hist.sessions[1],
        items=[dataclasses.replace(it, purchased=False)
               for it in hist.sessions[1].items])
    hist = dataclasses.replace(hist, sessions=[hist.sessions[0], quiet,
                                               hist.sessions[2]])
    _, state = serve_replay(_model(), [hist])
    deltas = [e.delta_norm for e in state.log]
    assert len(deltas) == 3
    assert deltas[0] > 0.0 and deltas[2] > 0.0
    assert deltas[1] == 0.0


def test_out_of_order_sessions_rejected():
    rng = np.random.default_rng(5)
    hist = make_history(rng, uid=2, lengths=[3, 3])
    shuffled = dataclasses.replace(hist, sessions=hist.sessions[::-1])
    with pytest.raises(ValueError, match="timestamp order"):
        serve_replay(_model(), [shuffled])


def test_audit_names_first_offending_session():
    rng = np.random.default_rng(6)
    hist = make_history(rng, uid=4, lengths=[3, 4])
    params = _model()
    preds, _ = serve_replay(params, [hist])
    preds[1].scores = preds[1].scores + 1e-3
    with pytest.raises(ValueError, match=r"user 4, session 1"):
        _audit(params, [hist], preds, {})


def test_state_file_roundtrip_and_resume(tmp_path):
    tr, va = _splits(seed=9)
    params = _gen_model("rnn", seed=8)
    full_preds, full_state = serve_replay(params, va)

    heads = [dataclasses.replace(h, sessions=h.sessions[:len(h.sessions) // 2])
             for h in va]
    tails = [dataclasses.replace(h, sessions=h.sessions[len(h.sessions) // 2:])
             for h in va]
    head_preds, mid_state = serve_replay(params, heads)

    path = tmp_path / "states.tsv"
    save_serving_state(mid_state, path)
    loaded = load_serving_state(path)
    assert loaded.variant == mid_state.variant
    for uid, vec in mid_state.states.items():
        assert np.array_equal(loaded.states[uid], vec)
    assert loaded.log == []

    tail_preds, _ = serve_replay(params, tails, audit=True, state=loaded)
    resumed = head_preds + tail_preds
    assert len(resumed) == len(full_preds)
    got = {(p.user_id, p.session_id): p.scores for p in resumed}
    for p in full_preds:
        assert np.array_equal(got[(p.user_id, p.session_id)], p.scores)


def test_state_file_rejects_garbage(tmp_path):
    bad = tmp_path / "junk.tsv"
    bad.write_text("not a header\n1\t0.0 0.0\n")
    with pytest.raises(ValueError, match="serving-state"):
        load_serving_state(bad)
    bad.write_text("")
    with pytest.raises(ValueError, match="empty"):
        load_serving_state(bad)


def test_state_dimension_mismatch_rejected(tmp_path):
    state = ServingState(variant="rnn", state_dim=3,
                         states={1: np.zeros(3, np.float32)})
    with pytest.raises(ValueError, match="dim"):
        serve_replay(_model("rnn"), [], state=state)
    path = tmp_path / "bad_dim.tsv"
    save_serving_state(state, path)
    text = path.read_text().replace("\t3\n", "\t4\n", 1)
    path.write_text(text)
    with pytest.raises(ValueError, match="header says 4"):
        load_serving_state(path)
