import math

import numpy as np
import pytest

from conftest import GENERAL, make_parser, synthetic_records
from logptr import numcore as nc
from logptr.errors import EmptyMessage, IndexOutOfRange
from logptr.ingest import align_template, apply_target
from logptr.model import ModelConfig, PointerParser, init_params, param_shapes
from logptr.numcore import Tensor
from logptr.tokenizer import SubwordVocab

MSGS = [["open", "file", "42"], ["close", "x1"]]
TMPLS = [["open", "file", "[VAR]"], ["close", "[VAR]"]]


def targets(msgs=MSGS, tmpls=TMPLS, labels=GENERAL):
    return [align_template(m, t, labels) for m, t in zip(msgs, tmpls)]


def overfit(parser, msgs, tgts, steps, lr=0.01):
    losses = []
    params = parser.parameters()
    for _ in range(steps):
        loss = parser.loss(msgs, tgts)
        loss.backward()
        nc.clip_grad_norm(params, 5.0)
        nc.adam_step(params, lr)
        losses.append(loss.item())
    return losses


# ---------------------------------------------------------------- parameters

def test_param_shapes_and_init():
    cfg = ModelConfig(embed_dim=6, hidden=5, m=10, vocab_size=30)
    shapes = param_shapes(cfg)
    assert shapes["label_embedding"] == (12, 6)
    assert shapes["ptr.w1"] == (10, 5) and shapes["ptr.w2"] == (5, 5) and shapes["ptr.v"] == (5,)
    assert shapes["bridge_h"] == (10, 5)
    params = init_params(cfg, 0)
    for name, p in params.items():
        if name.endswith(".b"):
            assert (p.data[5:10] == 1.0).all() and (p.data[:5] == 0).all() and (p.data[10:] == 0).all()
        else:
            assert np.abs(p.data).max() <= 0.08
    again = init_params(cfg, 0)
    assert all(np.array_equal(params[k].data, again[k].data) for k in params)


def test_model_config_defaults():
    cfg = ModelConfig()
    assert (cfg.embed_dim, cfg.hidden, cfg.dropout, cfg.max_decode_factor) == (256, 256, 0.2, 2)
    with pytest.raises(ValueError):
        ModelConfig(dropout=1.0)


# ---------------------------------------------------------------- embed_input

def _vocab_parser(pieces, e=4):
    vocab = SubwordVocab(["[PAD]", "[UNK]", "[BOS]", *pieces])
    cfg = ModelConfig(embed_dim=e, hidden=3, dropout=0.0, m=1, vocab_size=vocab.size)
    return PointerParser(cfg, vocab, GENERAL, seed=1)


def test_embed_single_subword_row_verbatim():
    p = _vocab_parser(["ab", "a", "##b"])
    x = p.embed_input(["ab"])
    table = p.params["subword_embedding"].data
    assert np.array_equal(x[1], table[p.vocab.ids["ab"]])
    labels = p.params["label_embedding"].data
    assert np.array_equal(x[0], labels[0])  # [VAR]
    assert np.array_equal(x[2], labels[1])  # EOS


def test_embed_mean_of_two_pieces():
    p = _vocab_parser(["a", "##b"])
    table = p.params["subword_embedding"].data
    x = p.embed_input(["ab"])
    expected = (table[p.vocab.ids["a"]].astype(np.float64) + table[p.vocab.ids["##b"]]) / 2
    assert np.allclose(x[1], expected, atol=1e-7)


def test_embed_mean_idempotent_for_identical_pieces():
    p = _vocab_parser(["a", "##a"])
    table = p.params["subword_embedding"].data
    table[p.vocab.ids["##a"]] = table[p.vocab.ids["a"]]
    x = p.embed_input(["aa", "a"])
    assert np.allclose(x[1], x[2], atol=1e-7)


def test_embed_dropout_only_in_training():
    p = make_parser(MSGS, dropout=0.5)
    batch = p.make_batch(MSGS)
    a = p.embed(batch).data
    b = p.embed(batch).data
    assert np.array_equal(a, b)
    c = p.embed(batch, training=True, rng=np.random.default_rng(0)).data
    assert not np.array_equal(a, c)


# ---------------------------------------------------------------- encode

def test_encode_zero_weights():
    p = make_parser(MSGS)
    for name, prm in p.params.items():
        if name != "subword_embedding" and name != "label_embedding":
            prm.data[:] = 0
    enc = p.encode(p.make_batch(MSGS))
    assert (enc.states.data == 0).all()
    assert (enc.h0.data == 0).all() and (enc.c0.data == 0).all()
    assert enc.states.shape == (2, 5, 16)


def test_encode_reversal_symmetry(rng):
    p = make_parser(MSGS, embed_dim=4, hidden=3, seed=7)
    q = make_parser(MSGS, embed_dim=4, hidden=3, seed=7)
    for part in ("w_ih", "w_hh", "b"):
        q.params[f"enc_fwd.{part}"].data = p.params[f"enc_bwd.{part}"].data.copy()
        q.params[f"enc_bwd.{part}"].data = p.params[f"enc_fwd.{part}"].data.copy()
    x = rng.standard_normal((1, 6, 4)).astype(np.float32)
    mask = np.ones((1, 6), bool)
    s1, _, _ = p.bilstm(Tensor(x), mask)
    s2, _, _ = q.bilstm(Tensor(x[:, ::-1].copy()), mask)
    h = 3
    assert np.allclose(s1.data[0, :, :h], s2.data[0, ::-1, h:], atol=1e-6)
    assert np.allclose(s1.data[0, :, h:], s2.data[0, ::-1, :h], atol=1e-6)


def test_encode_length_one_matches_cells(rng):
    p = make_parser(MSGS, embed_dim=4, hidden=3, seed=2)
    x = rng.standard_normal((1, 1, 4)).astype(np.float32)
    states, h0, c0 = p.bilstm(Tensor(x), np.ones((1, 1), bool))
    zero = Tensor(np.zeros(3, np.float32))
    prm = p.params
    hf, cf = nc.lstm_cell(Tensor(x[0, 0]), zero, zero, prm["enc_fwd.w_ih"], prm["enc_fwd.w_hh"], prm["enc_fwd.b"])
    hb, cb = nc.lstm_cell(Tensor(x[0, 0]), zero, zero, prm["enc_bwd.w_ih"], prm["enc_bwd.w_hh"], prm["enc_bwd.b"])
    assert np.allclose(states.data[0, 0], np.concatenate([hf.data, hb.data]), atol=1e-6)
    assert np.allclose(h0.data[0], np.tanh(np.concatenate([hf.data, hb.data]) @ prm["bridge_h"].data), atol=1e-6)
    assert np.allclose(c0.data[0], np.tanh(np.concatenate([cf.data, cb.data]) @ prm["bridge_c"].data), atol=1e-6)


# ---------------------------------------------------------------- pointer scores

def test_pointer_scores_zero_v():
    p = make_parser(MSGS)
    p.params["ptr.v"].data[:] = 0
    enc = p.encode(p.make_batch(MSGS))
    d = Tensor(np.random.default_rng(0).standard_normal((2, 3, 8)).astype(np.float32))
    assert (p.pointer_scores(enc, d).data == 0).all()


def test_pointer_scores_without_w2_ignore_decoder_state():
    p = make_parser(MSGS)
    p.params["ptr.w2"].data[:] = 0
    enc = p.encode(p.make_batch(MSGS))
    rng = np.random.default_rng(1)
    a = p.pointer_scores(enc, Tensor(rng.standard_normal((2, 1, 8)).astype(np.float32))).data
    b = p.pointer_scores(enc, Tensor(rng.standard_normal((2, 1, 8)).astype(np.float32))).data
    assert np.array_equal(a, b)


def test_pointer_scores_float64_oracle(rng):
    e = rng.standard_normal((2, 6))  # two positions, 2H = 6
    d = rng.standard_normal(3)
    w1, w2, v = rng.standard_normal((6, 3)), rng.standard_normal((3, 3)), rng.standard_normal(3)
    ref = [float(v @ np.tanh(w1.T @ e[i] + w2.T @ d)) for i in range(2)]
    got = nc.pointer_scores(
        nc.matmul(Tensor(e[None].astype(np.float32)), Tensor(w1.astype(np.float32))),
        nc.matmul(Tensor(d[None, None].astype(np.float32)), Tensor(w2.astype(np.float32))),
        Tensor(v.astype(np.float32)),
    ).data[0, 0]
    assert np.allclose(got, ref, atol=1e-5)


# ---------------------------------------------------------------- decode_step

def test_first_step_reads_start_row():
    p = make_parser(MSGS)
    enc = p.encode(p.make_batch(MSGS))
    start = p.params["label_embedding"].data[p.config.m + 1]
    assert np.array_equal(enc.embedded.data[:, 0], np.stack([start, start]))


def test_decode_step_matches_hand_composition():
    p = make_parser(MSGS, seed=4)
    enc = p.encode(p.make_batch(MSGS[:1]))
    with nc.no_grad():
        dist, (h, c) = p.decode_step(enc, np.array([2]), (enc.h0, enc.c0))
    prm = {k: v.data.astype(np.float64) for k, v in p.params.items()}
    x = enc.embedded.data[0, 2].astype(np.float64)  # embedding of input element 2 ("open")
    z = x @ prm["dec.w_ih"] + enc.h0.data[0] @ prm["dec.w_hh"] + prm["dec.b"]
    sig = lambda u: 1 / (1 + np.exp(-u))
    hs = 8
    i, f, g, o = sig(z[:hs]), sig(z[hs:2 * hs]), np.tanh(z[2 * hs:3 * hs]), sig(z[3 * hs:])
    c_ref = f * enc.c0.data[0] + i * g
    h_ref = o * np.tanh(c_ref)
    e = enc.states.data[0].astype(np.float64)
    u = np.tanh(e @ prm["ptr.w1"] + h_ref @ prm["ptr.w2"]) @ prm["ptr.v"]
    ref = np.exp(u - u.max()) / np.exp(u - u.max()).sum()
    assert np.allclose(h.data[0], h_ref, atol=1e-6) and np.allclose(c.data[0], c_ref, atol=1e-6)
    assert np.allclose(dist.data[0, 0], ref, atol=1e-6)
    with pytest.raises(IndexOutOfRange):
        p.decode_step(enc, np.array([6]), (enc.h0, enc.c0))


def test_sequence_loss_uses_teacher_forcing():
    p = make_parser(MSGS, seed=5)
    tgts = targets()
    batch = p.make_batch(MSGS, tgts)
    assert batch.prev[0].tolist() == [0, *tgts[0][:-1]]
    loss = p.sequence_loss(batch).item()
    total = 0.0
    with nc.no_grad():
        for row, (msg, tgt) in enumerate(zip(MSGS, tgts)):
            enc = p.encode(p.make_batch([msg]))
            state, prev = (enc.h0, enc.c0), 0
            for y in tgt:
                dist, state = p.decode_step(enc, np.array([prev]), state)
                total += -math.log(float(dist.data[0, 0, y - 1]) + 1e-12)
                prev = y  # gold, not argmax
    assert math.isclose(loss, total / 2, rel_tol=1e-5)


# ---------------------------------------------------------------- loss

def test_untrained_loss_near_uniform_bound():
    p = make_parser(MSGS, seed=6)
    tgts = targets()
    for msg, tgt in zip(MSGS, tgts):
        bound = len(tgt) * math.log(GENERAL.m + len(msg) + 1)
        loss = p.loss([msg], [tgt]).item()
        assert 0.8 * bound <= loss <= 1.2 * bound


def test_loss_gradients_end_to_end():
    msg, tmpl = ["open", "file", "42"], ["open", "file", "[VAR]"]
    p = make_parser([msg], seed=3)
    for prm in p.parameters():
        prm.data *= 5
    tgt = align_template(msg, tmpl, GENERAL)
    rep = nc.grad_check(lambda: p.loss([msg], [tgt]), p.parameters())
    assert rep.max_rel_error <= 1e-3, rep.per_param
    assert set(rep.per_param) == set(p.params)


def test_overfit_loss_monotone_and_decodes_gold():
    # narrow models saturate the attention tanh on a shared direction and stall,
    # so this uses the default width
    msg, tmpl = MSGS[0], TMPLS[0]
    p = make_parser([msg], embed_dim=256, hidden=256, seed=0)
    tgt = align_template(msg, tmpl, GENERAL)
    losses = overfit(p, [msg], [tgt], 50, lr=0.001)
    assert all(b <= a for a, b in zip(losses[5:], losses[6:])), losses
    assert losses[-1] < 0.05
    assert p.decode_messages([msg]) == [tgt]


def test_padding_does_not_change_loss():
    p = make_parser(MSGS + [["a", "b", "c", "d", "e", "f", "g"]], seed=9)
    long_msg = ["a", "b", "c", "d", "e", "f", "g"]
    long_t = align_template(long_msg, ["a", "[VAR]", "g"], GENERAL)
    for msg, tgt in zip(MSGS, targets()):
        alone = p.loss([msg], [tgt]).item()
        padded = p.loss([msg, long_msg], [tgt, long_t]).item() * 2 - p.loss([long_msg], [long_t]).item()
        assert abs(alone - padded) <= 1e-5


# ---------------------------------------------------------------- greedy decode

def test_greedy_stops_at_eos(monkeypatch):
    p = make_parser(MSGS)

    def peaked(enc, dec):
        scores = np.zeros((dec.shape[0], dec.shape[1], enc.mask.shape[1]), np.float32)
        scores[np.arange(len(enc.lengths)), :, enc.lengths - 1] = 10
        return Tensor(scores)

    monkeypatch.setattr(p, "pointer_scores", peaked)
    assert p.decode_messages(MSGS) == [(5,), (4,)]


def test_greedy_terminates_and_distributions_valid(monkeypatch):
    p = make_parser(MSGS, seed=11)
    seen = []
    original = p.decode_step

    def spy(enc, prev, state):
        dist, state = original(enc, prev, state)
        seen.append((dist.data.copy(), enc.mask.copy()))
        return dist, state

    monkeypatch.setattr(p, "decode_step", spy)
    enc = p.encode(p.make_batch(MSGS))
    for tgt, length in zip(p.greedy_decode(enc), enc.lengths):
        assert tgt[-1] == length
        assert len(tgt) <= 2 * length + 1
        assert all(1 <= i <= length for i in tgt)
    for dist, mask in seen:
        assert np.allclose(dist.sum(-1), 1, atol=1e-6)
        assert (dist[:, 0][~mask] == 0).all()


def test_greedy_forced_eos_after_max_steps(monkeypatch):
    p = make_parser(MSGS)

    def first(enc, dec):
        scores = np.zeros((dec.shape[0], dec.shape[1], enc.mask.shape[1]), np.float32)
        scores[..., 1] = 10  # always the first word
        return Tensor(scores)

    monkeypatch.setattr(p, "pointer_scores", first)
    enc = p.encode(p.make_batch(MSGS[:1]))
    (out,) = p.greedy_decode(enc, max_steps=[3])
    assert out == (2, 2, 2, 5)


# ---------------------------------------------------------------- parse_message

def test_parse_message_degraded_output(monkeypatch):
    p = make_parser(MSGS)
    monkeypatch.setattr(p, "decode_messages", lambda msgs, batch_size=64: [(1, 1, 1, 1, 5)])
    res = p.parse_message("open file 42")
    assert res.template == ["[VAR]"] * 4
    assert res.variables == []
    assert res.warning


def test_parse_message_empty():
    p = make_parser(MSGS)
    with pytest.raises(EmptyMessage):
        p.parse_message("   ")


def test_parse_message_figure_one():
    rng = np.random.default_rng(0)
    msgs, tmpls = [], []
    for _ in range(40):
        var, ms = str(rng.integers(0, 50)), str(rng.integers(1, 500))
        msgs.append(["Reading", "broadcast", "variable", var, "took", ms, "ms"])
        tmpls.append(["Reading", "broadcast", "variable", "[VAR]", "took", "[VAR]", "ms"])
        msgs.append(["Started", "reading", "broadcast", "variable", var])
        tmpls.append(["Started", "reading", "broadcast", "variable", "[VAR]"])
        msgs.append(["shutdown"])
        tmpls.append(["shutdown"])
    p = make_parser(msgs, embed_dim=256, hidden=256, seed=0)
    tgts = targets(msgs, tmpls)
    params = p.parameters()
    for step in range(100):
        idx = rng.choice(len(msgs), 16, replace=False)
        loss = p.loss([msgs[i] for i in idx], [tgts[i] for i in idx])
        loss.backward()
        nc.clip_grad_norm(params, 5.0)
        nc.adam_step(params, 0.001)
    res = p.parse_message("Reading broadcast variable 0 took 22 ms")
    assert " ".join(res.template) == "Reading broadcast variable [VAR] took [VAR] ms"
    assert [v["span_tokens"] for v in res.variables] == [["0"], ["22"]]
    assert res.tags == ["static"] * 3 + ["category", "static", "category", "static"]
    static = p.parse_message("shutdown")
    assert static.template == ["shutdown"] and static.variables == []


# ---------------------------------------------------------------- capacity

@pytest.mark.slow
def test_capacity_single_example(tmp_path):
    records = synthetic_records(tmp_path, 40, 200, seed=3)
    picks = np.random.default_rng(0).choice(len(records), 10, replace=False)
    for i in picks:
        rec = records[i]
        msg, tgt = list(rec.message_tokens), rec.target
        vocab_words = [w for r in records for w in r.message_tokens]
        p = make_parser([vocab_words], embed_dim=256, hidden=256, dropout=0.2, seed=int(i))
        drop = np.random.default_rng(int(i))
        params = p.parameters()
        ok = False
        for step in range(200):
            loss = p.loss([msg], [tgt], training=True, rng=drop)
            loss.backward()
            nc.clip_grad_norm(params, 5.0)
            nc.adam_step(params, 0.001)
            if step % 10 == 9 and p.decode_messages([msg]) == [tgt]:
                ok = True
                break
        assert ok, f"record {rec.line_id} not fitted in 200 steps"
        assert apply_target(msg, tgt, GENERAL) == list(rec.template_tokens)
