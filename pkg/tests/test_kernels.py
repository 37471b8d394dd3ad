"""Numba and numpy kernel backends must agree on every code path."""

import numpy as np
import pytest

from sylrec.ctc import log_softmax
from sylrec.kernels import numba_backend as nbk
from sylrec.kernels import numpy_backend as npk


def test_ctc_backends_agree():
    rng = np.random.default_rng(0)
    for _ in range(40):
        t = int(rng.integers(1, 8))
        k = int(rng.integers(2, 6))
        logp = log_softmax(rng.normal(size=(t, k)))
        labels = rng.integers(1, k, size=int(rng.integers(0, t + 2))) \
            .astype(np.int64)
        l1, g1, f1 = npk.ctc_loss_grad(logp, labels)
        l2, g2, f2 = nbk.ctc_loss_grad(np.ascontiguousarray(logp), labels)
        assert f1 == f2
        if f1:
            assert l1 == pytest.approx(l2, abs=1e-12)
            assert np.max(np.abs(g1 - g2)) < 1e-12
        else:
            assert l1 == l2 == np.inf


def packed_batch(rng, t=8, b=5, d=4):
    lens = np.sort(rng.integers(1, t + 1, size=b))[::-1]
    lens[0] = t
    kt = (np.arange(t)[:, None] < lens[None, :]).sum(axis=1).astype(np.int64)
    x = rng.normal(size=(t, b, d))
    for i in range(t):
        x[i, kt[i]:] = 0.0
    return x, kt, lens


def test_lstm_backends_agree():
    rng = np.random.default_rng(1)
    x, kt, _ = packed_batch(rng)
    h_dim = 3
    wx = rng.normal(size=(4 * h_dim, 4))
    wh = rng.normal(size=(4 * h_dim, h_dim))
    b = rng.normal(size=4 * h_dim)
    out1 = npk.lstm_forward(x, kt, wx, wh, b)
    out2 = nbk.lstm_forward(x, kt, wx, wh, b)
    for a, c in zip(out1, out2):
        assert np.max(np.abs(a - c)) < 1e-12
    dh = rng.normal(size=out1[0].shape)
    for i in range(x.shape[0]):
        dh[i, kt[i]:] = 0.0
    g1 = npk.lstm_backward(x, kt, wx, wh, *out1, dh)
    g2 = nbk.lstm_backward(x, kt, wx, wh, *out2, dh)
    for a, c in zip(g1, g2):
        assert np.max(np.abs(a - c)) < 1e-11


def random_viterbi_problem(rng):
    u = int(rng.integers(2, 5))
    q = int(rng.integers(1, 5))
    s = int(rng.integers(1, 4))
    nstates = np.full(u, s, dtype=np.int64)
    nstates[-1] = 1
    col0 = np.concatenate(([0], np.cumsum(nstates)[:-1])).astype(np.int64)
    t = int(rng.integers(s, 10))
    emis = rng.normal(size=(t, int(nstates.sum())))
    return dict(
        emis=emis, col0=col0, nstates=nstates,
        loop_lp=np.full(u, np.log(0.5)), fwd_lp=np.full(u, np.log(0.5)),
        lm_logp=np.log(rng.dirichlet(np.ones(u), size=q)),
        lm_next=rng.integers(0, q, size=(q, u)).astype(np.int64),
        lm_final=rng.normal(size=q), use_final=True, start_state=0)


@pytest.mark.parametrize("beam,cap", [(np.inf, 1 << 40), (3.0, 1 << 40),
                                      (np.inf, 5), (2.0, 3)])
def test_viterbi_backends_agree(beam, cap):
    rng = np.random.default_rng(2)
    for _ in range(30):
        prob = random_viterbi_problem(rng)
        args = (prob["emis"], prob["col0"], prob["nstates"], prob["loop_lp"],
                prob["fwd_lp"], prob["lm_logp"], prob["lm_next"],
                prob["lm_final"], prob["use_final"], prob["start_state"],
                beam, cap)
        s1, p1, e1, ok1 = npk.viterbi_pass(*args)
        s2, p2, e2, ok2 = nbk.viterbi_pass(*args)
        assert ok1 == ok2
        if ok1:
            assert s1 == pytest.approx(s2, abs=1e-10)
            assert np.array_equal(p1, p2)
            assert np.array_equal(e1, e2)
