"""Backoff n-gram language models over syllable tokens.

Probabilities live in the log10 domain (ARPA convention). Sentence
begin ``<s>`` is context-only and never predicted; sentence end ``</s>``
is a predicted event whenever it is part of the vocabulary. Training
uses interpolated Kneser-Ney with a fixed 0.75 discount, falling back
to add-0.5 smoothing when the corpus is too small to produce at least
two distinct continuation-count values (which covers every order-1
model by construction).
"""

from __future__ import annotations

import math
import warnings
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from sylrec.corpus import UNK

BOS = "<s>"
EOS = "</s>"
KN_DISCOUNT = 0.75
ADD_K = 0.5

LN10 = math.log(10.0)


@dataclass
class NGramModel:
    order: int
    vocab: list[str]
    probs: dict[tuple[str, ...], float]
    backoffs: dict[tuple[str, ...], float] = field(default_factory=dict)
    smoothing: str = "uniform"

    def __post_init__(self):
        self._vset = set(self.vocab)

    def logprob(self, history, token: str) -> float:
        """log10 P(token | history) with longest-match backoff."""
        if token not in self._vset:
            if UNK not in self._vset:
                raise KeyError(f"token {token!r} not in vocab and no {UNK}")
            token = UNK
        if self.order <= 1:
            ctx: tuple[str, ...] = ()
        else:
            hist = [t if t in self._vset or t == BOS else UNK
                    for t in history]
            ctx = tuple(hist[-(self.order - 1):])
        lp = 0.0
        while True:
            entry = self.probs.get(ctx + (token,))
            if entry is not None:
                return lp + entry
            if not ctx:
                raise KeyError(f"no unigram entry for {token!r}")
            lp += self.backoffs.get(ctx, 0.0)
            ctx = ctx[1:]


@dataclass
class PerplexityReport:
    token_count: int
    total_log10_prob: float
    perplexity: float
    oov_treatment: str = "unk-scored"
    oov_count: int = 0


def _iter_events(utt, vset, has_unk, score_eos):
    for tok in utt:
        oov = tok not in vset
        if oov and not has_unk:
            raise KeyError(f"token {tok!r} outside vocab and no {UNK}")
        yield (UNK if oov else tok), oov
    if score_eos:
        yield EOS, False


def train(corpus, order: int, vocab) -> NGramModel:
    """Estimate an n-gram model from tokenized utterances.

    corpus: iterable of token sequences (no sentence markers; the end
    marker is appended automatically when EOS is in the vocabulary).
    """
    if not 0 <= order <= 4:
        raise ValueError(f"order {order} outside supported range 0..4")
    vocab = sorted(set(vocab))
    if not vocab:
        raise ValueError("empty vocabulary")
    if BOS in vocab:
        raise ValueError(f"{BOS} is context-only and cannot be predicted")

    if order == 0:
        lp = -math.log10(len(vocab))
        return NGramModel(order=0, vocab=vocab,
                          probs={(w,): lp for w in vocab}, smoothing="uniform")

    vset = set(vocab)
    has_unk = UNK in vset
    score_eos = EOS in vset
    seqs = []
    for utt in corpus:
        seqs.append([w for w, _ in _iter_events(utt, vset, has_unk, score_eos)])
    n_events = sum(len(s) for s in seqs)
    if n_events == 0:
        raise ValueError("empty corpus for order >= 1")

    # counts[k]: k-gram -> count; grams never end in BOS, contexts are
    # BOS-padded at utterance starts
    counts: list[dict] = [None] * (order + 1)
    for k in range(1, order + 1):
        counts[k] = defaultdict(int)
    for toks in seqs:
        for i, w in enumerate(toks):
            for k in range(1, order + 1):
                ctx = tuple(toks[j] if j >= 0 else BOS
                            for j in range(i - k + 1, i))
                counts[k][ctx + (w,)] += 1

    # left-continuation counts feed the Kneser-Ney lower orders
    cont: list[dict] = [None] * order
    for k in range(1, order):
        seen = defaultdict(set)
        for g in counts[k + 1]:
            seen[g[1:]].add(g[0])
        cont[k] = {g: len(s) for g, s in seen.items()}
    cont_values = set()
    for k in range(1, order):
        cont_values.update(cont[k].values())
    use_kn = len(cont_values) >= 2

    if use_kn:
        probs, backoffs = _estimate_kneser_ney(counts, cont, order, vocab)
        smoothing = "kneser-ney"
    else:
        probs, backoffs = _estimate_add_k(counts, order, vocab)
        smoothing = "add-k"
    return NGramModel(order=order, vocab=vocab, probs=probs,
                      backoffs=backoffs, smoothing=smoothing)


def _backoff_prob(probs, backoffs, ctx, w):
    lp = 0.0
    while True:
        entry = probs.get(ctx + (w,))
        if entry is not None:
            return 10.0 ** (lp + entry)
        lp += backoffs.get(ctx, 0.0)
        ctx = ctx[1:]


def _estimate_kneser_ney(counts, cont, order, vocab):
    """Interpolated KN, discount 0.75 at every level. Lower levels use
    continuation counts except for sentence-initial contexts, which keep
    raw counts (they cannot be continued from the left)."""
    probs: dict[tuple[str, ...], float] = {}
    backoffs: dict[tuple[str, ...], float] = {}
    v = len(vocab)

    c1 = cont[1] if order >= 2 else counts[1]
    tot1 = sum(c1.values())
    n1p = len(c1)
    gamma1 = KN_DISCOUNT * n1p / tot1
    for w in vocab:
        p = max(c1.get((w,), 0) - KN_DISCOUNT, 0.0) / tot1 + gamma1 / v
        probs[(w,)] = math.log10(p)

    for k in range(2, order + 1):
        top = k == order
        by_ctx: dict[tuple[str, ...], dict[str, int]] = defaultdict(dict)
        for g in counts[k]:
            h, w = g[:-1], g[-1]
            if top or h[0] == BOS:
                by_ctx[h][w] = counts[k][g]
            else:
                by_ctx[h][w] = cont[k][g]
        for h, row in sorted(by_ctx.items()):
            tot = sum(row.values())
            gamma = KN_DISCOUNT * len(row) / tot
            for w, c in row.items():
                p = (max(c - KN_DISCOUNT, 0.0) / tot
                     + gamma * _backoff_prob(probs, backoffs, h[1:], w))
                probs[h + (w,)] = math.log10(p)
            backoffs[h] = math.log10(gamma)
    return probs, backoffs


def _estimate_add_k(counts, order, vocab):
    """Add-0.5 at every level; each observed context stores an explicit
    probability for the whole vocabulary, so no backoff weights are
    needed (unseen contexts descend with implicit weight 1)."""
    probs: dict[tuple[str, ...], float] = {}
    v = len(vocab)
    for k in range(1, order + 1):
        totals: dict[tuple[str, ...], int] = defaultdict(int)
        for g, c in counts[k].items():
            totals[g[:-1]] += c
        for h, tot in sorted(totals.items()):
            denom = tot + ADD_K * v
            for w in vocab:
                c = counts[k].get(h + (w,), 0)
                probs[h + (w,)] = math.log10((c + ADD_K) / denom)
    return probs, {}


def perplexity(model: NGramModel, test, oov_treatment: str = "unk-scored"
               ) -> PerplexityReport:
    """Perplexity over tokenized utterances, sentence-end included when
    the model predicts it. A zero-probability event yields an infinite
    perplexity rather than an error."""
    if oov_treatment not in ("unk-scored", "skipped"):
        raise ValueError(f"unknown oov_treatment {oov_treatment!r}")
    vset = set(model.vocab)
    has_unk = UNK in vset
    score_eos = EOS in vset and model.order >= 1
    total = 0.0
    count = 0
    n_oov = 0
    n_utts = 0
    for utt in test:
        n_utts += 1
        hist: list[str] = [BOS]
        for w, oov in _iter_events(utt, vset, has_unk or
                                   oov_treatment == "skipped", score_eos):
            if oov:
                n_oov += 1
            if oov and oov_treatment == "skipped":
                hist.append(UNK if has_unk else w)
                continue
            total += model.logprob(hist, w)
            count += 1
            hist.append(w)
    if n_utts == 0 or count == 0:
        raise ValueError("empty test set")
    if math.isfinite(total):
        ppl = 10.0 ** (-total / count)
    else:
        ppl = math.inf
    return PerplexityReport(token_count=count, total_log10_prob=total,
                            perplexity=ppl, oov_treatment=oov_treatment,
                            oov_count=n_oov)


# ---------------------------------------------------------------------------
# ARPA interchange
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return f"{x:.7g}"


def _write_arpa_stream(model: NGramModel, fh) -> None:
    max_k = max(model.order, 1)
    levels: list[dict] = [dict() for _ in range(max_k + 1)]
    for g, lp in model.probs.items():
        levels[len(g)][g] = [lp, None]
    for h, bw in model.backoffs.items():
        if not 1 <= len(h) <= max_k:
            continue
        entry = levels[len(h)].setdefault(h, [-99.0, None])
        entry[1] = bw
    fh.write("\\data\\\n")
    for k in range(1, max_k + 1):
        fh.write(f"ngram {k}={len(levels[k])}\n")
    for k in range(1, max_k + 1):
        fh.write(f"\n\\{k}-grams:\n")
        for g in sorted(levels[k]):
            lp, bw = levels[k][g]
            line = f"{_fmt(lp)}\t{' '.join(g)}"
            if bw is not None:
                line += f"\t{_fmt(bw)}"
            fh.write(line + "\n")
    fh.write("\n\\end\\\n")


def write_arpa(model: NGramModel, path) -> None:
    """Serialize in ARPA text form, 7 significant digits per value.

    An order-0 model is written as its equivalent uniform unigram file.
    Contexts that carry a backoff weight without an explicit probability
    (sentence-initial paddings) get the conventional -99 placeholder.
    """
    with open(path, "w", encoding="utf-8") as fh:
        _write_arpa_stream(model, fh)


def dumps_arpa(model: NGramModel) -> str:
    import io
    buf = io.StringIO()
    _write_arpa_stream(model, buf)
    return buf.getvalue()


def read_arpa(path) -> NGramModel:
    """Parse an ARPA file, rejecting malformed headers and n-gram count
    mismatches with the offending line number."""
    with open(path, encoding="utf-8") as fh:
        return _parse_arpa(fh, str(path))


def loads_arpa(text: str) -> NGramModel:
    return _parse_arpa(text.splitlines(), "<string>")


def _parse_arpa(lines, path) -> NGramModel:
    declared: dict[int, int] = {}
    probs: dict[tuple[str, ...], float] = {}
    backoffs: dict[tuple[str, ...], float] = {}
    seen_counts: dict[int, int] = {}
    state = "preamble"
    cur_k = 0
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        if line == "\\data\\":
            state = "data"
            continue
        if line == "\\end\\":
            state = "end"
            continue
        if line.startswith("\\") and line.endswith("-grams:"):
            try:
                cur_k = int(line[1:-len("-grams:")])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: bad section header "
                                 f"{line!r}") from None
            if cur_k not in declared:
                raise ValueError(f"{path}:{lineno}: section {line!r} "
                                 "was not declared in \\data\\")
            state = "grams"
            seen_counts[cur_k] = 0
            continue
        if state == "data":
            if not line.startswith("ngram "):
                raise ValueError(f"{path}:{lineno}: expected 'ngram k=N', "
                                 f"got {line!r}")
            body = line[len("ngram "):]
            k_str, _, n_str = body.partition("=")
            try:
                declared[int(k_str)] = int(n_str)
            except ValueError:
                raise ValueError(f"{path}:{lineno}: bad ngram count line "
                                 f"{line!r}") from None
            continue
        if state == "grams":
            fields = line.split()
            if len(fields) == cur_k + 1:
                has_bw = False
            elif len(fields) == cur_k + 2:
                has_bw = True
            else:
                raise ValueError(f"{path}:{lineno}: expected {cur_k}-gram "
                                 f"entry, got {len(fields)} fields")
            try:
                lp = float(fields[0])
                bw = float(fields[-1]) if has_bw else None
            except ValueError:
                raise ValueError(f"{path}:{lineno}: bad numeric field "
                                 f"in {line!r}") from None
            g = tuple(fields[1:cur_k + 1])
            probs[g] = lp
            if has_bw:
                backoffs[g] = bw
            seen_counts[cur_k] += 1
            continue
        raise ValueError(f"{path}:{lineno}: unexpected content {line!r}")
    if state != "end":
        raise ValueError(f"{path}: missing \\end\\ marker")
    for k, n in declared.items():
        got = seen_counts.get(k, 0)
        if got != n:
            raise ValueError(f"{path}: \\{k}-grams: declares {n} entries "
                             f"but {got} listed")
    vocab = sorted(w for (w,) in (g for g in probs if len(g) == 1)
                   if w != BOS)
    if not vocab:
        raise ValueError(f"{path}: no unigram entries")
    return NGramModel(order=max(declared), vocab=vocab, probs=probs,
                      backoffs=backoffs, smoothing="arpa")


# ---------------------------------------------------------------------------
# Finite-state compilation for the decoder
# ---------------------------------------------------------------------------

@dataclass
class LmAutomaton:
    """Dense successor view of a backoff model over a fixed token list.

    States are the suffix-closed stored contexts; logp/next_state are
    (Q, U) natural-log successor scores and follow-on states. The
    distribution P(. | state) depends only on the longest stored suffix
    of the history, so this automaton scores exactly like the model.
    """
    tokens: list[str]
    states: list[tuple[str, ...]]
    logp: np.ndarray          # (Q, U) natural log P(token | state)
    next_state: np.ndarray    # (Q, U) int64
    final_logp: np.ndarray    # (Q,) natural log P(EOS | state), 0 if unused
    use_final: bool
    start: int


def compile_automaton(model: NGramModel, tokens: list[str]) -> LmAutomaton:
    vset = set(model.vocab)
    missing = [t for t in tokens if t not in vset]
    if missing:
        if UNK not in vset:
            raise KeyError(f"tokens {missing} not in LM vocab and no {UNK}")
        warnings.warn(f"{len(missing)} decoder tokens outside LM vocab "
                      f"are scored as {UNK}: {missing[:5]}...")
    lookup = [t if t in vset else UNK for t in tokens]

    ctx_set = {()}
    for g in model.probs:
        if len(g) >= 2:
            ctx_set.add(g[:-1])
    ctx_set.update(h for h in model.backoffs if h)
    # suffix closure so every backoff parent is a state
    for h in list(ctx_set):
        while h:
            h = h[1:]
            ctx_set.add(h)
    states = sorted(ctx_set, key=lambda h: (len(h), h))
    index = {h: i for i, h in enumerate(states)}
    q = len(states)
    u = len(tokens)

    # successor vectors bottom-up: parent (drop-first-token) is shorter,
    # so it is already filled when we reach h
    logp = np.empty((q, u))
    for i, h in enumerate(states):
        if h:
            parent = index[h[1:]]
            logp[i] = logp[parent] + model.backoffs.get(h, 0.0) * LN10
        else:
            logp[i] = [model.probs[(w,)] * LN10 for w in lookup]
        for j, w in enumerate(lookup):
            stored = model.probs.get(h + (w,))
            if stored is not None:
                logp[i, j] = stored * LN10

    max_ctx = max(model.order - 1, 0)
    next_state = np.empty((q, u), dtype=np.int64)
    for i, h in enumerate(states):
        for j, w in enumerate(lookup):
            nh = (h + (w,))[-max_ctx:] if max_ctx else ()
            while nh not in index:
                nh = nh[1:]
            next_state[i, j] = index[nh]

    use_final = EOS in vset and model.order >= 1
    final_logp = np.zeros(q)
    if use_final:
        for i, h in enumerate(states):
            final_logp[i] = model.logprob(h, EOS) * LN10

    sh = (BOS,)[-max_ctx:] if max_ctx else ()
    while sh not in index:
        sh = sh[1:]
    return LmAutomaton(tokens=list(tokens), states=states, logp=logp,
                       next_state=next_state, final_logp=final_logp,
                       use_final=use_final, start=index[sh])


def read_token_list(path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        toks = [line.strip() for line in fh if line.strip()]
    if len(set(toks)) != len(toks):
        raise ValueError(f"{path}: duplicate tokens")
    return toks


def write_token_list(tokens, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in tokens:
            fh.write(t + "\n")
