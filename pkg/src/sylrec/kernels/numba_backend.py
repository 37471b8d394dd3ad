"""Numba @njit versions of the hot kernels.

Function-for-function mirror of numpy_backend; see that module for the
shared conventions (blank index, packing, token keys). Kept free of any
package imports so the JIT cache stays valid across sylrec releases.
"""

import numpy as np
from numba import njit

NEG_INF = -np.inf


@njit(cache=True)
def _lae(a, b):
    # log(exp(a) + exp(b)) with -inf treated as zero probability
    if a == NEG_INF:
        return b
    if b == NEG_INF:
        return a
    if a < b:
        a, b = b, a
    return a + np.log1p(np.exp(b - a))


@njit(cache=True)
def _sigmoid_inplace(z):
    for i in range(z.shape[0]):
        for j in range(z.shape[1]):
            v = z[i, j]
            if v >= 0.0:
                z[i, j] = 1.0 / (1.0 + np.exp(-v))
            else:
                e = np.exp(v)
                z[i, j] = e / (1.0 + e)


@njit(cache=True)
def ctc_loss_grad(logp, labels):
    T, K = logp.shape
    L = labels.shape[0]
    reps = 0
    for i in range(1, L):
        if labels[i] == labels[i - 1]:
            reps += 1
    grad = np.zeros((T, K))
    if L + reps > T:
        return np.inf, grad, False

    S = 2 * L + 1
    lab = np.zeros(S, dtype=np.int64)
    for i in range(L):
        lab[2 * i + 1] = labels[i]
    skip_ok = np.zeros(S, dtype=np.bool_)
    for s in range(2, S):
        skip_ok[s] = lab[s] != 0 and lab[s] != lab[s - 2]

    alpha = np.full((T, S), NEG_INF)
    alpha[0, 0] = logp[0, lab[0]]
    if S > 1:
        alpha[0, 1] = logp[0, lab[1]]
    for t in range(1, T):
        for s in range(S - 1, -1, -1):
            acc = alpha[t - 1, s]
            if s >= 1:
                acc = _lae(acc, alpha[t - 1, s - 1])
            if s >= 2 and skip_ok[s]:
                acc = _lae(acc, alpha[t - 1, s - 2])
            alpha[t, s] = logp[t, lab[s]] + acc

    log_p = alpha[T - 1, S - 1]
    if S > 1:
        log_p = _lae(log_p, alpha[T - 1, S - 2])
    if log_p == NEG_INF:
        return np.inf, grad, False

    beta = np.full((T, S), NEG_INF)
    beta[T - 1, S - 1] = 0.0
    if S > 1:
        beta[T - 1, S - 2] = 0.0
    nxt = np.empty(S)
    for t in range(T - 2, -1, -1):
        for s in range(S):
            nxt[s] = beta[t + 1, s] + logp[t + 1, lab[s]]
        for s in range(S):
            acc = nxt[s]
            if s + 1 < S:
                acc = _lae(acc, nxt[s + 1])
            if s + 2 < S and skip_ok[s + 2]:
                acc = _lae(acc, nxt[s + 2])
            beta[t, s] = acc

    for t in range(T):
        for k in range(K):
            grad[t, k] = np.exp(logp[t, k])
        for s in range(S):
            ab = alpha[t, s] + beta[t, s]
            if ab != NEG_INF:
                grad[t, lab[s]] -= np.exp(ab - log_p)
    return -log_p, grad, True


@njit(cache=True)
def lstm_forward(x, kt, wx, wh, b):
    T, B, _ = x.shape
    H = wh.shape[1]
    h = np.zeros((T, B, H))
    c = np.zeros((T, B, H))
    gates = np.zeros((T, B, 4 * H))
    h_prev = np.zeros((B, H))
    c_prev = np.zeros((B, H))
    wxT = np.ascontiguousarray(wx.T)
    whT = np.ascontiguousarray(wh.T)
    for t in range(T):
        k = kt[t]
        if k == 0:
            break
        z = np.dot(x[t, :k], wxT) + np.dot(h_prev[:k], whT)
        for r in range(k):
            for j in range(4 * H):
                z[r, j] += b[j]
        _sigmoid_inplace(z[:, :H])
        _sigmoid_inplace(z[:, H:2 * H])
        z[:, 2 * H:3 * H] = np.tanh(z[:, 2 * H:3 * H])
        _sigmoid_inplace(z[:, 3 * H:])
        for r in range(k):
            for j in range(H):
                i_g = z[r, j]
                f_g = z[r, H + j]
                g_g = z[r, 2 * H + j]
                o_g = z[r, 3 * H + j]
                cn = f_g * c_prev[r, j] + i_g * g_g
                c[t, r, j] = cn
                hn = o_g * np.tanh(cn)
                h[t, r, j] = hn
                h_prev[r, j] = hn
                c_prev[r, j] = cn
        gates[t, :k] = z
    return h, c, gates


@njit(cache=True)
def lstm_backward(x, kt, wx, wh, h, c, gates, dh_out):
    T, B, D = x.shape
    H = wh.shape[1]
    dx = np.zeros((T, B, D))
    dwx = np.zeros_like(wx)
    dwh = np.zeros_like(wh)
    db = np.zeros(4 * H)
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        k = kt[t]
        if k == 0:
            continue
        dz = np.empty((k, 4 * H))
        for r in range(k):
            for j in range(H):
                i_g = gates[t, r, j]
                f_g = gates[t, r, H + j]
                g_g = gates[t, r, 2 * H + j]
                o_g = gates[t, r, 3 * H + j]
                tc = np.tanh(c[t, r, j])
                cp = c[t - 1, r, j] if t > 0 else 0.0
                dh = dh_out[t, r, j] + dh_next[r, j]
                do = dh * tc
                dc = dh * o_g * (1.0 - tc * tc) + dc_next[r, j]
                dz[r, j] = dc * g_g * i_g * (1.0 - i_g)
                dz[r, H + j] = dc * cp * f_g * (1.0 - f_g)
                dz[r, 2 * H + j] = dc * i_g * (1.0 - g_g * g_g)
                dz[r, 3 * H + j] = do * o_g * (1.0 - o_g)
                dc_next[r, j] = dc * f_g
        dzT = np.ascontiguousarray(dz.T)
        dwx += np.dot(dzT, x[t, :k])
        if t > 0:
            dwh += np.dot(dzT, h[t - 1, :k])
        for j in range(4 * H):
            s = 0.0
            for r in range(k):
                s += dz[r, j]
            db[j] += s
        dx[t, :k] = np.dot(dz, wx)
        dh_next[:k] = np.dot(dz, wh)
    return dx, dwx, dwh, db


@njit(cache=True)
def _recombine_prune(cand_keys, cand_scores, cand_backs, cand_entries, m,
                     out_keys, out_scores, out_backs, out_entries,
                     beam, max_active):
    # best candidate per key; ties keep the earliest-generated candidate
    order = np.argsort(cand_keys[:m])
    n = 0
    i = 0
    while i < m:
        j = i
        best = order[i]
        while j + 1 < m and cand_keys[order[j + 1]] == cand_keys[order[i]]:
            j += 1
            cj = order[j]
            if cand_scores[cj] > cand_scores[best] or (
                    cand_scores[cj] == cand_scores[best] and cj < best):
                best = cj
        out_keys[n] = cand_keys[best]
        out_scores[n] = cand_scores[best]
        out_backs[n] = cand_backs[best]
        out_entries[n] = cand_entries[best]
        n += 1
        i = j + 1

    best_score = NEG_INF
    for i in range(n):
        if out_scores[i] > best_score:
            best_score = out_scores[i]
    thresh = best_score - beam
    w = 0
    for i in range(n):
        if out_scores[i] >= thresh:
            out_keys[w] = out_keys[i]
            out_scores[w] = out_scores[i]
            out_backs[w] = out_backs[i]
            out_entries[w] = out_entries[i]
            w += 1
    n = w

    if n > max_active:
        # keep scores above the max_active-th largest, then fill the
        # remaining slots with threshold-equal tokens in key order
        part = np.partition(out_scores[:n].copy(), n - max_active)
        kth = part[n - max_active]
        n_gt = 0
        for i in range(n):
            if out_scores[i] > kth:
                n_gt += 1
        quota_eq = max_active - n_gt
        w = 0
        for i in range(n):
            s = out_scores[i]
            take = s > kth
            if not take and s == kth and quota_eq > 0:
                take = True
                quota_eq -= 1
            if take:
                out_keys[w] = out_keys[i]
                out_scores[w] = out_scores[i]
                out_backs[w] = out_backs[i]
                out_entries[w] = out_entries[i]
                w += 1
        n = w
    return n


@njit(cache=True)
def viterbi_pass(emis, col0, nstates, loop_lp, fwd_lp, lm_logp, lm_next,
                 lm_final, use_final, start_state, beam, max_active):
    T = emis.shape[0]
    U = col0.shape[0]
    max_s = 0
    for u in range(U):
        if nstates[u] > max_s:
            max_s = nstates[u]

    path_u = np.full(T, -1, dtype=np.int64)
    path_entry = np.zeros(T, dtype=np.int8)

    Q = lm_logp.shape[0]
    keyspace = Q * U * max_s
    cap = max_active if max_active < keyspace else keyspace
    cand_cap = cap * (U + 1) + U + 8
    cand_keys = np.empty(cand_cap, dtype=np.int64)
    cand_scores = np.empty(cand_cap)
    cand_backs = np.empty(cand_cap, dtype=np.int64)
    cand_entries = np.empty(cand_cap, dtype=np.int8)
    # recombination output before pruning can hold every distinct key
    sc_keys = np.empty(cand_cap, dtype=np.int64)
    sc_scores = np.empty(cand_cap)
    sc_backs = np.empty(cand_cap, dtype=np.int64)
    sc_entries = np.empty(cand_cap, dtype=np.int8)

    tb_keys = np.empty((T, cap), dtype=np.int64)
    tb_backs = np.empty((T, cap), dtype=np.int64)
    tb_entries = np.empty((T, cap), dtype=np.int8)
    counts = np.zeros(T, dtype=np.int64)

    m = 0
    for u in range(U):
        cand_keys[m] = (lm_next[start_state, u] * U + u) * max_s
        cand_scores[m] = lm_logp[start_state, u] + emis[0, col0[u]]
        cand_backs[m] = -1
        cand_entries[m] = 1
        m += 1
    n = _recombine_prune(cand_keys, cand_scores, cand_backs, cand_entries, m,
                         sc_keys, sc_scores, sc_backs, sc_entries,
                         beam, max_active)
    counts[0] = n
    if n == 0:
        return NEG_INF, path_u, path_entry, False
    tb_keys[0, :n] = sc_keys[:n]
    tb_backs[0, :n] = sc_backs[:n]
    tb_entries[0, :n] = sc_entries[:n]
    scores = sc_scores[:n].copy()

    for t in range(1, T):
        n_prev = counts[t - 1]
        m = 0
        for i in range(n_prev):
            key = tb_keys[t - 1, i]
            sc = scores[i]
            q = key // (U * max_s)
            u = (key // max_s) % U
            pos = key % max_s
            # self loop
            cand_keys[m] = key
            cand_scores[m] = sc + loop_lp[u] + emis[t, col0[u] + pos]
            cand_backs[m] = i
            cand_entries[m] = 0
            m += 1
            if pos < nstates[u] - 1:
                cand_keys[m] = key + 1
                cand_scores[m] = sc + fwd_lp[u] + emis[t, col0[u] + pos + 1]
                cand_backs[m] = i
                cand_entries[m] = 0
                m += 1
            else:
                ex = sc + fwd_lp[u]
                for u2 in range(U):
                    cand_keys[m] = (lm_next[q, u2] * U + u2) * max_s
                    cand_scores[m] = ex + lm_logp[q, u2] + emis[t, col0[u2]]
                    cand_backs[m] = i
                    cand_entries[m] = 1
                    m += 1
        n = _recombine_prune(cand_keys, cand_scores, cand_backs, cand_entries,
                             m, sc_keys, sc_scores, sc_backs, sc_entries,
                             beam, max_active)
        counts[t] = n
        if n == 0:
            return NEG_INF, path_u, path_entry, False
        tb_keys[t, :n] = sc_keys[:n]
        tb_backs[t, :n] = sc_backs[:n]
        tb_entries[t, :n] = sc_entries[:n]
        scores = sc_scores[:n].copy()

    n = counts[T - 1]
    best = -1
    best_score = NEG_INF
    best_key = np.int64(0)
    for i in range(n):
        key = tb_keys[T - 1, i]
        q = key // (U * max_s)
        u = (key // max_s) % U
        pos = key % max_s
        if pos == nstates[u] - 1:
            sc = scores[i] + fwd_lp[u]
            if use_final:
                sc += lm_final[q]
            if sc > best_score or (sc == best_score and best >= 0
                                   and key < best_key):
                best = i
                best_score = sc
                best_key = key
    if best < 0 or best_score == NEG_INF:
        return NEG_INF, path_u, path_entry, False

    j = best
    for t in range(T - 1, -1, -1):
        key = tb_keys[t, j]
        path_u[t] = (key // max_s) % U
        path_entry[t] = tb_entries[t, j]
        j = tb_backs[t, j]
    return best_score, path_u, path_entry, True
