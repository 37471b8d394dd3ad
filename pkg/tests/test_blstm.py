import math

import numpy as np
import pytest

from sylrec import blstm
from sylrec.blstm import (BlstmModel, BlstmTopology, TrainConfig, adam_step,
                          forward, grad_check, init_model, load_model,
                          save_model, train)
from sylrec.ctc import greedy_decode
from sylrec.scoring import corpus_wer


def tiny_model(layers=1, hidden=4, din=3, dout=4, dropout=0.0, seed=0):
    topo = BlstmTopology(num_layers=layers, hidden=hidden, input_dim=din,
                         output_dim=dout, dropout=dropout)
    return init_model(topo, seed=seed)


def test_rows_normalized():
    model = tiny_model(layers=2)
    rng = np.random.default_rng(0)
    post = forward(model, rng.normal(size=(7, 3)))
    lse = np.log(np.exp(post).sum(axis=1))
    assert np.max(np.abs(lse)) < 1e-6


def test_zero_weights_uniform_posteriors():
    model = tiny_model(dout=5)
    for p in model.params:
        p[:] = 0.0
    post = forward(model, np.random.default_rng(1).normal(size=(4, 3)))
    assert np.allclose(post, math.log(1.0 / 5.0), atol=1e-12)


def test_bidirectional_symmetry():
    """Reversing input and swapping direction parameters (plus every
    fwd/bwd feature block) reverses the output frames."""
    model = tiny_model(layers=2, hidden=5, din=4, dout=6, seed=3)
    h = model.topology.hidden

    def swap_cols(w):
        # upper layers consume [fwd, bwd] concatenations, which the
        # swapped model sees in [bwd, fwd] order
        return np.hstack([w[:, h:], w[:, :h]]).copy()

    swapped = model.copy()
    for layer in range(model.topology.num_layers):
        off = 6 * layer
        for i in range(3):
            swapped.params[off + i] = model.params[off + 3 + i].copy()
            swapped.params[off + 3 + i] = model.params[off + i].copy()
        if layer > 0:
            swapped.params[off] = swap_cols(swapped.params[off])
            swapped.params[off + 3] = swap_cols(swapped.params[off + 3])
    swapped.params[-2] = swap_cols(model.w_out)
    rng = np.random.default_rng(4)
    x = rng.normal(size=(9, 4))
    fwd = forward(model, x)
    rev = forward(swapped, x[::-1])
    assert np.max(np.abs(fwd - rev[::-1])) < 1e-9


def test_forward_deterministic():
    model = tiny_model(layers=2, seed=5)
    x = np.random.default_rng(6).normal(size=(8, 3))
    assert np.array_equal(forward(model, x), forward(model, x))


def test_input_dim_mismatch():
    model = tiny_model(din=3)
    with pytest.raises(ValueError, match="feature dim"):
        forward(model, np.zeros((4, 5)))


def test_parameter_count_formula():
    for layers, hidden, din, dout in [(1, 4, 3, 5), (3, 7, 12, 9)]:
        topo = BlstmTopology(num_layers=layers, hidden=hidden, input_dim=din,
                             output_dim=dout)
        expect = 0
        for layer in range(layers):
            d_in = din if layer == 0 else 2 * hidden
            expect += 2 * 4 * (hidden * (d_in + hidden) + hidden)
        expect += dout * 2 * hidden + dout
        assert topo.param_count() == expect
        model = init_model(topo)
        assert sum(p.size for p in model.params) == expect


def test_forget_gate_bias_init():
    model = tiny_model(hidden=6)
    for layer in range(model.topology.num_layers):
        for direction in ("fwd", "bwd"):
            _, _, b = model.layer_params(layer, direction)
            assert np.all(b[6:12] == 1.0)


def test_lr_schedule_endpoints():
    cfg = TrainConfig(epochs=17, lr_initial=0.001, lr_final=0.00003)
    assert cfg.learning_rate(1) == pytest.approx(0.001, abs=1e-9)
    assert cfg.learning_rate(17) == pytest.approx(0.00003, abs=1e-9)
    mids = [cfg.learning_rate(e) for e in range(1, 18)]
    assert all(a > b for a, b in zip(mids, mids[1:]))


def test_adam_single_step_hand_computed():
    # quadratic f(x) = 0.5 x^2 at x = 3: grad = 3
    g = 3.0
    m = 0.9 * 0.0 + 0.1 * g                # 0.3
    v = 0.999 * 0.0 + 0.001 * g * g        # 0.009
    m_hat = m / (1 - 0.9)                  # 3.0
    v_hat = v / (1 - 0.999)                # 9.0
    expect = 3.0 - 0.1 * m_hat / (math.sqrt(v_hat) + 1e-8)
    got, _, _ = adam_step(3.0, g, 0.0, 0.0, step=1, lr=0.1)
    assert got == pytest.approx(expect, abs=1e-12)
    # ~ 3.0 - 0.1 since m_hat/sqrt(v_hat) = 1 for the first step
    assert got == pytest.approx(2.9, abs=1e-8)


def test_grad_check_tiny_model():
    rng = np.random.default_rng(7)
    model = tiny_model(layers=2, hidden=6, din=4, dout=5, seed=8)
    feats = rng.normal(size=(9, 4))
    labels = [1, 3, 2]
    err = grad_check(model, feats, labels, min_samples=40, seed=9)
    assert err < 1e-4


def test_grad_check_deterministic_and_dropout_free():
    rng = np.random.default_rng(10)
    model = tiny_model(layers=1, hidden=5, din=3, dout=4, dropout=0.5, seed=11)
    feats = rng.normal(size=(8, 3))
    e1 = grad_check(model, feats, [2, 1], min_samples=20, seed=12)
    e2 = grad_check(model, feats, [2, 1], min_samples=20, seed=12)
    assert e1 == e2
    assert e1 < 1e-4


def test_dropout_expectation_matches_infer():
    model = tiny_model(layers=1, hidden=3, din=2, dout=3, dropout=0.5, seed=13)
    x = np.random.default_rng(14).normal(size=(2, 2))
    infer = forward(model, x)
    rng = np.random.default_rng(15)
    acc = np.zeros_like(infer)
    n = 10000
    for _ in range(n):
        post, _ = forward(model, x, mode="train", dropout_rng=rng)
        acc += np.exp(post)
    mean_post = acc / n
    rel = np.abs(mean_post - np.exp(infer)) / np.exp(infer)
    assert np.max(rel) < 0.02


def test_train_deterministic_given_seed():
    rng = np.random.default_rng(16)
    data = [(rng.normal(size=(rng.integers(6, 12), 3)), [1, 2])
            for _ in range(6)]
    model = tiny_model(layers=1, hidden=4, din=3, dout=4, dropout=0.5, seed=17)
    cfg = TrainConfig(epochs=3, batch_size=3, seed=18)
    m1, h1 = train(model, data, cfg)
    m2, h2 = train(model, data, cfg)
    assert h1 == h2
    for a, b in zip(m1.params, m2.params):
        assert np.array_equal(a, b)


def test_train_skips_infeasible_pairs():
    rng = np.random.default_rng(19)
    data = [(rng.normal(size=(6, 3)), [1, 2]),
            (rng.normal(size=(2, 3)), [1, 1, 2, 2])]
    model = tiny_model()
    with pytest.warns(UserWarning, match="skipped 1"):
        train(model, data, TrainConfig(epochs=1, batch_size=2, seed=0))


def test_train_reduces_loss_and_overfits_tiny_set():
    rng = np.random.default_rng(20)
    protos = rng.normal(size=(4, 5)) * 3.0
    data = []
    for _ in range(8):
        labels = list(rng.integers(1, 4, size=3))
        frames = np.concatenate([np.tile(protos[l], (3, 1)) for l in labels])
        frames += 0.05 * rng.normal(size=frames.shape)
        data.append((frames, labels))
    model = tiny_model(layers=1, hidden=16, din=5, dout=4, seed=21)
    cfg = TrainConfig(epochs=100, batch_size=2, seed=22, lr_initial=1e-2,
                      lr_final=1e-3)
    trained, history = train(model, data, cfg)
    assert history[-1] < history[0]
    pairs = []
    for frames, labels in data:
        hyp = greedy_decode(forward(trained, frames))
        pairs.append(([str(t) for t in labels], [str(t) for t in hyp.tokens]))
    assert corpus_wer(pairs).wer < 0.05


def test_checkpoint_roundtrip(tmp_path):
    model = tiny_model(layers=2, hidden=5, din=4, dout=6, dropout=0.5, seed=23)
    p = tmp_path / "model.sylb"
    save_model(model, p, token_table=["aa", "bb", "cc", UNK_TOKEN := "<unk>",
                                      "dd"])
    back, tokens = load_model(p)
    assert tokens == ["aa", "bb", "cc", "<unk>", "dd"]
    assert back.topology == model.topology
    assert back.seed == model.seed
    for a, b in zip(model.params, back.params):
        assert np.array_equal(a, b)
    x = np.random.default_rng(24).normal(size=(6, 4))
    assert np.array_equal(forward(model, x), forward(back, x))


def test_checkpoint_bad_magic(tmp_path):
    p = tmp_path / "bad.sylb"
    p.write_bytes(b"NOPE" + b"\x00" * 64)
    with pytest.raises(ValueError, match="checkpoint"):
        load_model(p)
