"""Pure-numpy implementations of the hot kernels.

These are the fallback path selected by ``SYLREC_NO_NUMBA=1`` (or when
numba is not importable). The numba backend mirrors every function here
with identical semantics; tests/test_kernels.py asserts agreement and
benchmarks/bench_kernels.py compares speed.

Conventions shared by both backends:
  * all log values are natural-log, float64, with -inf for impossible
  * CTC blank is column 0 of the (T, K) log-posterior matrix
  * packed sequence batches are (T, B, D) with rows sorted by length
    descending and kt[t] = number of sequences still active at frame t
"""

import numpy as np

NEG_INF = -np.inf


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


# ---------------------------------------------------------------------------
# CTC forward-backward
# ---------------------------------------------------------------------------

def ctc_loss_grad(logp, labels):
    """CTC loss and exact gradient wrt logits, log-domain forward-backward.

    logp: (T, K) log-softmax rows, blank at column 0.
    labels: (L,) int64 ids in [1, K-1]; may be empty (all-blank path).
    Returns (loss, grad, feasible); an infeasible label length gives
    (inf, zero gradient, False) instead of raising.
    """
    T, K = logp.shape
    L = int(labels.shape[0])
    reps = int(np.sum(labels[1:] == labels[:-1])) if L > 1 else 0
    if L + reps > T:
        return np.inf, np.zeros((T, K)), False

    S = 2 * L + 1
    lab = np.zeros(S, dtype=np.int64)
    lab[1::2] = labels
    skip_ok = np.zeros(S, dtype=bool)
    if S > 2:
        skip_ok[2:] = (lab[2:] != 0) & (lab[2:] != lab[:-2])

    # alpha[t, s] includes the emission at t; beta[t, s] excludes it
    alpha = np.full((T, S), NEG_INF)
    alpha[0, 0] = logp[0, lab[0]]
    if S > 1:
        alpha[0, 1] = logp[0, lab[1]]
    for t in range(1, T):
        prev = alpha[t - 1]
        acc = prev.copy()
        acc[1:] = np.logaddexp(acc[1:], prev[:-1])
        if S > 2:
            skip = np.where(skip_ok[2:], prev[:-2], NEG_INF)
            acc[2:] = np.logaddexp(acc[2:], skip)
        alpha[t] = logp[t, lab] + acc

    log_p = alpha[T - 1, S - 1]
    if S > 1:
        log_p = np.logaddexp(log_p, alpha[T - 1, S - 2])
    if not np.isfinite(log_p):
        return np.inf, np.zeros((T, K)), False

    beta = np.full((T, S), NEG_INF)
    beta[T - 1, S - 1] = 0.0
    if S > 1:
        beta[T - 1, S - 2] = 0.0
    for t in range(T - 2, -1, -1):
        nxt = beta[t + 1] + logp[t + 1, lab]
        acc = nxt.copy()
        acc[:-1] = np.logaddexp(acc[:-1], nxt[1:])
        if S > 2:
            skip = np.where(skip_ok[2:], nxt[2:], NEG_INF)
            acc[:-2] = np.logaddexp(acc[:-2], skip)
        beta[t] = acc

    occ = np.exp(alpha + beta - log_p)  # state occupancy, rows sum to 1
    gamma = np.zeros((T, K))
    np.add.at(gamma, (np.arange(T)[:, None], lab[None, :]), occ)
    grad = np.exp(logp) - gamma
    return -log_p, grad, True


# ---------------------------------------------------------------------------
# LSTM sequence kernels (one direction, packed batch)
# ---------------------------------------------------------------------------

def lstm_forward(x, kt, wx, wh, b):
    """Run one LSTM direction over a packed batch.

    x: (T, B, D), kt: (T,) active counts, wx: (4H, D), wh: (4H, H),
    b: (4H,). Gate block order is input, forget, cell, output.
    Returns (h, c, gates) with gates holding post-activation values.
    """
    T, B, _ = x.shape
    H = wh.shape[1]
    h = np.zeros((T, B, H))
    c = np.zeros((T, B, H))
    gates = np.zeros((T, B, 4 * H))
    h_prev = np.zeros((B, H))
    c_prev = np.zeros((B, H))
    wxT = wx.T.copy()
    whT = wh.T.copy()
    for t in range(T):
        k = int(kt[t])
        if k == 0:
            break
        z = x[t, :k] @ wxT + h_prev[:k] @ whT + b
        i = _sigmoid(z[:, :H])
        f = _sigmoid(z[:, H:2 * H])
        g = np.tanh(z[:, 2 * H:3 * H])
        o = _sigmoid(z[:, 3 * H:])
        c_new = f * c_prev[:k] + i * g
        h_new = o * np.tanh(c_new)
        gates[t, :k, :H] = i
        gates[t, :k, H:2 * H] = f
        gates[t, :k, 2 * H:3 * H] = g
        gates[t, :k, 3 * H:] = o
        c[t, :k] = c_new
        h[t, :k] = h_new
        h_prev[:k] = h_new
        c_prev[:k] = c_new
    return h, c, gates


def lstm_backward(x, kt, wx, wh, h, c, gates, dh_out):
    """Backpropagate through lstm_forward. Returns (dx, dwx, dwh, db)."""
    T, B, D = x.shape
    H = wh.shape[1]
    dx = np.zeros((T, B, D))
    dwx = np.zeros_like(wx)
    dwh = np.zeros_like(wh)
    db = np.zeros(4 * H)
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        k = int(kt[t])
        if k == 0:
            continue
        i = gates[t, :k, :H]
        f = gates[t, :k, H:2 * H]
        g = gates[t, :k, 2 * H:3 * H]
        o = gates[t, :k, 3 * H:]
        tc = np.tanh(c[t, :k])
        if t > 0:
            c_prev = c[t - 1, :k]
            h_prev = h[t - 1, :k]
        else:
            c_prev = np.zeros((k, H))
            h_prev = np.zeros((k, H))
        dh = dh_out[t, :k] + dh_next[:k]
        do = dh * tc
        dc = dh * o * (1.0 - tc * tc) + dc_next[:k]
        di = dc * g
        df = dc * c_prev
        dg = dc * i
        dz = np.empty((k, 4 * H))
        dz[:, :H] = di * i * (1.0 - i)
        dz[:, H:2 * H] = df * f * (1.0 - f)
        dz[:, 2 * H:3 * H] = dg * (1.0 - g * g)
        dz[:, 3 * H:] = do * o * (1.0 - o)
        dwx += dz.T @ x[t, :k]
        dwh += dz.T @ h_prev
        db += dz.sum(axis=0)
        dx[t, :k] = dz @ wx
        dh_next[:k] = dz @ wh
        dc_next[:k] = dc * f
    return dx, dwx, dwh, db


# ---------------------------------------------------------------------------
# Viterbi token passing over (LM state x unit x HMM position)
# ---------------------------------------------------------------------------
#
# Units are syllable HMMs (plus optional unk/silence columns already baked
# into the LM matrices by the caller). A token is keyed by
#     key = (q * U + u) * max_s + pos
# Transitions into frame t consume emis[t, col0[u] + pos]:
#   * self loop     (q, u, pos)   -> (q, u, pos),   weight loop_lp[u]
#   * advance       (q, u, pos)   -> (q, u, pos+1), weight fwd_lp[u]
#   * cross (exit)  (q, u, S_u-1) -> (lm_next[q, u2], u2, 0),
#                   weight fwd_lp[u] + lm_logp[q, u2]
# Termination at the last frame requires pos == S_u - 1 and adds
# fwd_lp[u] (+ lm_final[q] when use_final).

def viterbi_pass(emis, col0, nstates, loop_lp, fwd_lp, lm_logp, lm_next,
                 lm_final, use_final, start_state, beam, max_active):
    """Beam-pruned max-probability path. Returns
    (score, path_u, path_entry, ok) where path_entry[t] flags an entry
    arc into frame t; ok is False when no complete hypothesis survives.
    """
    T = emis.shape[0]
    U = col0.shape[0]
    max_s = int(nstates.max())

    path_u = np.full(T, -1, dtype=np.int64)
    path_entry = np.zeros(T, dtype=np.int8)

    # initial entries from the start state
    keys = (np.asarray(lm_next[start_state], dtype=np.int64) * U
            + np.arange(U, dtype=np.int64)) * max_s
    scores = lm_logp[start_state] + emis[0, col0]
    backs = np.full(U, -1, dtype=np.int64)
    entries = np.ones(U, dtype=np.int8)
    keys, scores, backs, entries = _recombine_prune(
        keys, scores, backs, entries, beam, max_active)
    if keys.size == 0:
        return NEG_INF, path_u, path_entry, False

    tb_keys = [keys]
    tb_backs = [backs]
    tb_entries = [entries]

    for t in range(1, T):
        n = keys.size
        q = keys // (U * max_s)
        u = (keys // max_s) % U
        pos = keys % max_s
        idx = np.arange(n, dtype=np.int64)

        # self loops
        ck = [keys]
        cs = [scores + loop_lp[u] + emis[t, col0[u] + pos]]
        cb = [idx]
        ce = [np.zeros(n, dtype=np.int8)]

        # within-unit advance
        adv = pos < nstates[u] - 1
        if np.any(adv):
            ck.append(keys[adv] + 1)
            cs.append(scores[adv] + fwd_lp[u[adv]]
                      + emis[t, col0[u[adv]] + pos[adv] + 1])
            cb.append(idx[adv])
            ce.append(np.zeros(int(adv.sum()), dtype=np.int8))

        # cross-unit entries from unit-final states
        fin = pos == nstates[u] - 1
        nf = int(fin.sum())
        if nf:
            qf = q[fin]
            exit_score = scores[fin] + fwd_lp[u[fin]]
            new_q = lm_next[qf]                     # (nf, U)
            new_u = np.broadcast_to(np.arange(U, dtype=np.int64), (nf, U))
            ck.append(((new_q * U + new_u) * max_s).ravel())
            cs.append((exit_score[:, None] + lm_logp[qf]
                       + emis[t, col0][None, :]).ravel())
            cb.append(np.repeat(idx[fin], U))
            ce.append(np.ones(nf * U, dtype=np.int8))

        keys, scores, backs, entries = _recombine_prune(
            np.concatenate(ck), np.concatenate(cs),
            np.concatenate(cb), np.concatenate(ce), beam, max_active)
        if keys.size == 0:
            return NEG_INF, path_u, path_entry, False
        tb_keys.append(keys)
        tb_backs.append(backs)
        tb_entries.append(entries)

    # termination: unit-final states only
    u = (keys // max_s) % U
    pos = keys % max_s
    q = keys // (U * max_s)
    fin = pos == nstates[u] - 1
    if not np.any(fin):
        return NEG_INF, path_u, path_entry, False
    final_scores = np.where(fin, scores + fwd_lp[u], NEG_INF)
    if use_final:
        final_scores = np.where(fin, final_scores + lm_final[q], final_scores)
    best = int(np.argmax(final_scores))
    ties = np.flatnonzero(final_scores == final_scores[best])
    if ties.size > 1:
        best = int(ties[np.argmin(keys[ties])])
    best_score = float(final_scores[best])
    if not np.isfinite(best_score):
        return NEG_INF, path_u, path_entry, False

    # traceback
    j = best
    for t in range(T - 1, -1, -1):
        path_u[t] = (tb_keys[t][j] // max_s) % U
        path_entry[t] = tb_entries[t][j]
        j = int(tb_backs[t][j])
    return best_score, path_u, path_entry, True


def _recombine_prune(keys, scores, backs, entries, beam, max_active):
    """Keep the best-scoring candidate per key, then beam/cap prune.

    Ties keep the candidate generated first (stable order)."""
    order = np.lexsort((np.arange(keys.size), -scores, keys))
    sk = keys[order]
    first = np.ones(sk.size, dtype=bool)
    first[1:] = sk[1:] != sk[:-1]
    win = order[first]
    keys, scores, backs, entries = keys[win], scores[win], backs[win], entries[win]

    best = scores.max()
    keep = scores >= best - beam
    keys, scores, backs, entries = keys[keep], scores[keep], backs[keep], entries[keep]
    if keys.size > max_active:
        cut = np.argsort(-scores, kind="stable")[:max_active]
        cut.sort()
        keys, scores, backs, entries = keys[cut], scores[cut], backs[cut], entries[cut]
    return keys, scores, backs, entries
