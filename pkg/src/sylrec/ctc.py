"""CTC loss with exact gradients plus greedy and prefix-beam decoding.

Blank is output index 0 everywhere; real tokens occupy 1..V. All
probability arithmetic stays in the natural-log domain.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from sylrec import kernels
from sylrec.corpus import UNK
from sylrec.lm import BOS, LN10, NGramModel

BLANK = 0
NEG_INF = -np.inf


@dataclass
class CtcLossResult:
    loss: float
    grad: np.ndarray  # (T, V+1), d loss / d logits
    feasible: bool = True


@dataclass
class Hypothesis:
    tokens: list[int]
    score: float

    def strings(self, token_table: list[str]) -> list[str]:
        return [token_table[t - 1] for t in self.tokens]


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def check_posterior(post: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    post = np.asarray(post, dtype=np.float64)
    if post.ndim != 2:
        raise ValueError("posterior matrix must be 2-D")
    if not np.all(np.isfinite(post)):
        raise ValueError("posterior matrix has non-finite entries")
    lse = np.log(np.exp(post - post.max(axis=1, keepdims=True)).sum(axis=1)) \
        + post.max(axis=1)
    if np.max(np.abs(lse)) > tol:
        raise ValueError(f"posterior rows not normalized (max |lse| = "
                         f"{np.max(np.abs(lse)):.2e})")
    return post


def collapse(path) -> list[int]:
    """Merge adjacent repeats, then delete blanks."""
    out = []
    prev = None
    for p in path:
        if p != prev:
            out.append(p)
        prev = p
    return [p for p in out if p != BLANK]


def ctc_loss(logits: np.ndarray, labels) -> CtcLossResult:
    """-ln of the total probability of all paths collapsing to labels,
    with the exact analytic gradient wrt the logits.

    Label sequences too long for T frames (each adjacent repeat needs a
    separating blank) give an infinite loss and zero gradient instead
    of raising, so batched training can skip them.
    """
    logits = np.ascontiguousarray(logits, dtype=np.float64)
    labels = np.asarray(list(labels), dtype=np.int64)
    if logits.ndim != 2:
        raise ValueError("logits must be (T, V+1)")
    k = logits.shape[1]
    if labels.size and (labels.min() < 1 or labels.max() >= k):
        raise ValueError(f"labels must lie in 1..{k - 1}")
    logp = log_softmax(logits)
    loss, grad, feasible = kernels.ctc_loss_grad(logp, labels)
    return CtcLossResult(loss=float(loss), grad=grad, feasible=bool(feasible))


def greedy_decode(post: np.ndarray) -> Hypothesis:
    """Best per-frame token (ties to the lowest index), then collapse.
    The score is the sum of the chosen frame log-probabilities."""
    post = check_posterior(post)
    path = np.argmax(post, axis=1)
    score = float(post[np.arange(post.shape[0]), path].sum())
    return Hypothesis(tokens=collapse(path), score=score)


def prefix_beam_decode(post: np.ndarray, lm: NGramModel | None = None,
                       beam_width: int = 16, lm_weight: float = 0.0,
                       insertion_bonus: float = 0.0,
                       token_table: list[str] | None = None
                       ) -> list[Hypothesis]:
    """Prefix beam search over label sequences with optional shallow
    n-gram fusion.

    Each prefix keeps separate blank/non-blank path mass; ranking uses
    ln P_acoustic + lm_weight * ln P_LM + insertion_bonus * |prefix|.
    No sentence-end LM term is applied. Ties break lexicographically on
    the prefix, so results are deterministic.
    """
    post = check_posterior(post)
    t_max, k = post.shape
    if beam_width < 1:
        raise ValueError("beam_width must be >= 1")
    if not (math.isfinite(lm_weight) and math.isfinite(insertion_bonus)):
        raise ValueError("lm_weight and insertion_bonus must be finite")

    lm_lookup = None
    if lm is not None:
        if token_table is None or len(token_table) != k - 1:
            raise ValueError("LM fusion needs a token_table of length V")
        vset = set(lm.vocab)
        missing = [t for t in token_table if t not in vset]
        if missing:
            if UNK not in vset:
                raise ValueError(f"tokens {missing[:5]} not in LM vocab "
                                 f"and the LM has no {UNK}")
            warnings.warn(f"{len(missing)} decoder tokens missing from the "
                          f"LM vocab are scored as {UNK}")
        lm_lookup = [t if t in vset else UNK for t in token_table]

    def lm_step(prefix_strs, tok_id):
        # natural-log LM increment for appending tok_id to the prefix
        w = lm_lookup[tok_id - 1]
        return lm.logprob((BOS,) + prefix_strs, w) * LN10

    # per prefix: [log p ending in blank, log p ending in non-blank, lm sum]
    beams: dict[tuple[int, ...], list[float]] = {(): [0.0, NEG_INF, 0.0]}
    lm_strs: dict[tuple[int, ...], tuple[str, ...]] = {(): ()}

    for t in range(t_max):
        nxt: dict[tuple[int, ...], list[float]] = {}
        for prefix in sorted(beams):
            pb, pnb, lmsum = beams[prefix]
            tot = np.logaddexp(pb, pnb)
            ent = nxt.setdefault(prefix, [NEG_INF, NEG_INF, lmsum])
            ent[0] = np.logaddexp(ent[0], tot + post[t, BLANK])
            if prefix:
                ent[1] = np.logaddexp(ent[1], pnb + post[t, prefix[-1]])
            for c in range(1, k):
                ext = prefix + (c,)
                base = pb if prefix and c == prefix[-1] else tot
                if base == NEG_INF:
                    continue
                ent2 = nxt.get(ext)
                if ent2 is None:
                    if lm is not None:
                        lmsum2 = lmsum + lm_step(lm_strs[prefix], c)
                        lm_strs.setdefault(
                            ext, lm_strs[prefix] + (lm_lookup[c - 1],))
                    else:
                        lmsum2 = 0.0
                    ent2 = nxt[ext] = [NEG_INF, NEG_INF, lmsum2]
                ent2[1] = np.logaddexp(ent2[1], base + post[t, c])
        ranked = sorted(
            nxt.items(),
            key=lambda kv: (-_combined(kv[1], len(kv[0]), lm_weight,
                                       insertion_bonus), kv[0]))
        beams = dict(ranked[:beam_width])

    out = [Hypothesis(tokens=list(p),
                      score=_combined(v, len(p), lm_weight, insertion_bonus))
           for p, v in beams.items()]
    out.sort(key=lambda h: (-h.score, tuple(h.tokens)))
    return out


def _combined(entry, length, lm_weight, insertion_bonus) -> float:
    acoustic = np.logaddexp(entry[0], entry[1])
    return float(acoustic + lm_weight * entry[2] + insertion_bonus * length)
