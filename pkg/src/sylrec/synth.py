"""Synthetic desk-scale corpora: a 4-gram syllable source rendered as
prototype feature blocks plus Gaussian noise, with a pseudo-word layer.

The syllable marginal is Zipf-shaped at the head and tail but flattened
around the 80%-coverage knee, and rare (tail) syllables appear only
through the context-independent mixture component of the source. Both
choices exist so that the reduced view behaves like the real corpus the
generator stands in for: cutting at 80% training coverage drops close
to 20% of held-out instances, and those out-of-vocabulary events land
near-independently across the test set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from sylrec.corpus import SyllableLexicon, TokenizedUtterance

CONSONANTS = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r",
              "s", "t", "v", "z", "ch", "sh", "st", "br", "kr", "tr"]
VOWELS = ["a", "e", "i", "o", "u", "au", "ei", "eu"]


def syllable_names(count: int) -> list[str]:
    names = []
    for c in CONSONANTS:
        for v in VOWELS:
            names.append(c + v)
            if len(names) == count:
                return names
    raise ValueError(f"at most {len(CONSONANTS) * len(VOWELS)} syllables")


@dataclass
class SynthSpec:
    vocab_size: int = 50
    zipf_exponent: float = 1.0
    lm_order: int = 4
    lm_seed: int = 0
    num_utterances: int = 2000
    utt_len_range: tuple[int, int] = (4, 8)
    frames_per_syllable: tuple[int, int] = (3, 8)
    feature_dim: int = 20
    noise_sigma: float = 0.45
    prototype_scale: float = 1.0
    cluster_spread: float = 0.35
    num_clusters: int = 0          # 0: one cluster per 4 syllables
    test_fraction: float = 0.15
    mix_lambda: float = 0.7        # weight of the context-specific part
    branch: int = 3                # successors per context
    head_coverage: float = 0.8     # marginal mass carried by the head

    def __post_init__(self):
        if self.vocab_size < 4:
            raise ValueError("need at least 4 syllables")
        if self.utt_len_range[0] < 1:
            raise ValueError("utterances must contain at least one syllable")
        if self.frames_per_syllable[0] < 1:
            raise ValueError("syllables need at least one frame")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        if not 0 < self.test_fraction < 1:
            raise ValueError("test_fraction must lie in (0, 1)")
        if not 0 <= self.mix_lambda <= 1:
            raise ValueError("mix_lambda must lie in [0, 1]")


def knee_smoothed_marginal(v: int, exponent: float, head_coverage: float
                           ) -> tuple[np.ndarray, int]:
    """Syllable marginal by designed rank: Zipf head, flat knee band,
    Zipf-ish tail. Returns (weights, head_count) where ranks below
    head_count carry head_coverage of the mass and the knee band keeps
    every step near the coverage boundary small."""
    n_knee = max(4, v // 6)
    n_tail = max(2, int(round(v * 0.22)))
    n_head = v - n_knee - n_tail
    if n_head < 2:
        raise ValueError(f"vocab size {v} too small for the knee layout")
    tail_mass = 1.0 - head_coverage
    knee_mass = min(0.35 * head_coverage, 1.8 * tail_mass * n_knee / n_tail)
    head_mass = head_coverage - knee_mass

    head = 1.0 / np.arange(1, n_head + 1) ** exponent
    head *= head_mass / head.sum()
    knee_top = knee_mass / n_knee * 1.15
    knee = np.linspace(knee_top, 2 * knee_mass / n_knee - knee_top, n_knee)
    tail = 1.0 / np.arange(1, n_tail + 1) ** (exponent * 0.3)
    tail *= tail_mass / tail.sum()
    w = np.concatenate([head, knee, tail])
    # enforce strictly decreasing mass so rank order is stable
    for i in range(1, v):
        if w[i] > w[i - 1]:
            w[i] = w[i - 1] * 0.999
    return w / w.sum(), n_head + n_knee


class SyntheticSource:
    """Order-(n-1) Markov chain over syllable ids.

    P(w | ctx) = mix_lambda * C_ctx(w) + (1 - mix_lambda) * marginal(w),
    where C_ctx is a sparse distribution over `branch` candidates drawn
    (deterministically per context) from the head of the marginal. Tail
    syllables therefore occur only via the context-independent term.
    """

    def __init__(self, vocab: list[str], marginal: np.ndarray,
                 head_count: int, order: int, seed: int,
                 mix_lambda: float = 0.7, branch: int = 3):
        self.vocab = vocab
        self.marginal = marginal
        self.head_count = head_count
        self.order = order
        self.seed = seed
        self.mix_lambda = mix_lambda
        self.branch = branch
        head = marginal[:head_count]
        self._head_probs = head / head.sum()
        self._cache: dict[tuple[int, ...], np.ndarray] = {}

    def _context_dist(self, ctx: tuple[int, ...]) -> np.ndarray:
        dist = self._cache.get(ctx)
        if dist is None:
            rng = np.random.default_rng(
                np.random.SeedSequence([self.seed, len(ctx), *[c + 1
                                                               for c in ctx]]))
            cand = rng.choice(self.head_count, size=self.branch,
                              replace=False, p=self._head_probs)
            weights = rng.gamma(1.0, size=self.branch)
            dist = np.zeros(len(self.vocab))
            dist[cand] = weights / weights.sum()
            dist = (self.mix_lambda * dist
                    + (1.0 - self.mix_lambda) * self.marginal)
            self._cache[ctx] = dist
        return dist

    def next_probs(self, history: tuple[int, ...]) -> np.ndarray:
        ctx = tuple(history[-(self.order - 1):]) if self.order > 1 else ()
        return self._context_dist(ctx)

    def sample(self, rng: np.random.Generator, length: int) -> list[int]:
        out: list[int] = []
        for _ in range(length):
            p = self.next_probs(tuple(out))
            out.append(int(rng.choice(len(self.vocab), p=p)))
        return out


@dataclass
class SynthCorpus:
    spec: SynthSpec
    syllables: list[str]                  # by designed rank
    lexicon: SyllableLexicon              # words with counts unset
    source: SyntheticSource
    prototypes: np.ndarray                # (V, D)
    utt_ids: list[str]
    words: dict[str, list[str]]           # utt -> word transcript
    syllable_refs: dict[str, list[str]]   # utt -> true syllable sequence
    features: dict[str, np.ndarray]       # utt -> (T, D)
    alignments: dict[str, list[tuple[str, int, int]]]  # 1-based inclusive
    train_ids: list[str] = field(default_factory=list)
    test_ids: list[str] = field(default_factory=list)

    def transcripts(self, ids) -> list[tuple[str, list[str]]]:
        return [(u, self.words[u]) for u in ids]


def _build_word_inventory(source, syllables, rng, pair_count, triple_count):
    """Pseudo-words: every syllable alone, plus the most frequent bigram
    and trigram chunks of a calibration stream. Inventory sizes keep the
    lexicon's type-level mean syllables-per-word near 1.83."""
    stream: list[int] = []
    while len(stream) < 4000:
        stream.extend(source.sample(rng, 40))
    pairs: dict[tuple[int, int], int] = {}
    triples: dict[tuple[int, int, int], int] = {}
    for i in range(len(stream) - 2):
        p = (stream[i], stream[i + 1])
        pairs[p] = pairs.get(p, 0) + 1
        t = (stream[i], stream[i + 1], stream[i + 2])
        triples[t] = triples.get(t, 0) + 1
    top_pairs = sorted(pairs, key=lambda g: (-pairs[g], g))[:pair_count]
    top_triples = sorted(triples, key=lambda g: (-triples[g], g))[:triple_count]
    entries = {s: [s] for s in syllables}
    chunks = {(i,): syllables[i] for i in range(len(syllables))}
    for g in list(top_pairs) + list(top_triples):
        name = "-".join(syllables[i] for i in g)
        entries[name] = [syllables[i] for i in g]
        chunks[g] = name
    return entries, chunks


def _segment_words(tokens, chunks, rng, p3=0.55, p2=0.6):
    """Greedy randomized segmentation into inventory chunks; the take
    probabilities aim the instance-level word length near 1.83."""
    words = []
    i = 0
    n = len(tokens)
    while i < n:
        took = False
        if i + 3 <= n and tuple(tokens[i:i + 3]) in chunks \
                and rng.random() < p3:
            words.append(chunks[tuple(tokens[i:i + 3])])
            i += 3
            took = True
        elif i + 2 <= n and tuple(tokens[i:i + 2]) in chunks \
                and rng.random() < p2:
            words.append(chunks[tuple(tokens[i:i + 2])])
            i += 2
            took = True
        if not took:
            words.append(chunks[(tokens[i],)])
            i += 1
    return words


def synth_generate(spec: SynthSpec, seed: int = 0) -> SynthCorpus:
    """Build a full synthetic corpus: syllable sequences from the 4-gram
    source, features as noisy prototype blocks, a pseudo-word lexicon
    and word transcripts, plus true frame alignments.

    Seeds split off a master SeedSequence in fixed order: source
    structure, corpus sampling, prototypes, word segmentation.
    """
    ss = np.random.SeedSequence([seed, spec.lm_seed])
    src_ss, corpus_ss, proto_ss, word_ss = ss.spawn(4)

    v = spec.vocab_size
    syllables = syllable_names(v)
    marginal, head_count = knee_smoothed_marginal(
        v, spec.zipf_exponent, spec.head_coverage)
    source = SyntheticSource(syllables, marginal, head_count, spec.lm_order,
                             seed=int(src_ss.generate_state(1)[0] % 2**31),
                             mix_lambda=spec.mix_lambda, branch=spec.branch)

    proto_rng = np.random.default_rng(proto_ss)
    n_clusters = spec.num_clusters or max(4, v // 4)
    centers = proto_rng.normal(size=(n_clusters, spec.feature_dim)) \
        * spec.prototype_scale
    assign = proto_rng.integers(0, n_clusters, size=v)
    prototypes = centers[assign] + spec.cluster_spread * proto_rng.normal(
        size=(v, spec.feature_dim))

    word_rng = np.random.default_rng(word_ss)
    entries, chunks = _build_word_inventory(
        source, syllables, word_rng,
        pair_count=int(1.4 * v), triple_count=int(0.6 * v))
    lexicon = SyllableLexicon(entries=entries)

    rng = np.random.default_rng(corpus_ss)
    lo, hi = spec.utt_len_range
    d_lo, d_hi = spec.frames_per_syllable
    utt_ids, words, refs, feats, aligns = [], {}, {}, {}, {}
    for i in range(spec.num_utterances):
        utt_id = f"synth{i:05d}"
        length = int(rng.integers(lo, hi + 1))
        tokens = source.sample(rng, length)
        refs[utt_id] = [syllables[t] for t in tokens]
        words[utt_id] = _segment_words(tokens, chunks, word_rng)
        durs = rng.integers(d_lo, d_hi + 1, size=length)
        total = int(durs.sum())
        x = np.empty((total, spec.feature_dim))
        alignment = []
        pos = 0
        for tok, dur in zip(tokens, durs):
            x[pos:pos + dur] = prototypes[tok]
            alignment.append((syllables[tok], pos + 1, pos + int(dur)))
            pos += int(dur)
        if spec.noise_sigma > 0:
            x += spec.noise_sigma * rng.normal(size=x.shape)
        feats[utt_id] = x
        aligns[utt_id] = alignment
        utt_ids.append(utt_id)

    n_test = max(1, int(round(spec.test_fraction * spec.num_utterances)))
    test_ids = utt_ids[-n_test:]
    train_ids = utt_ids[:-n_test]
    return SynthCorpus(spec=spec, syllables=syllables, lexicon=lexicon,
                       source=source, prototypes=prototypes, utt_ids=utt_ids,
                       words=words, syllable_refs=refs, features=feats,
                       alignments=aligns, train_ids=train_ids,
                       test_ids=test_ids)


def lexicon_mean_syllables(lex: SyllableLexicon) -> float:
    if not lex.entries:
        raise ValueError("empty lexicon")
    return sum(len(s) for s in lex.entries.values()) / len(lex.entries)


def sample_reference_utterances(source: SyntheticSource,
                                rng: np.random.Generator, n_utts: int,
                                len_range: tuple[int, int]
                                ) -> list[list[str]]:
    """Token sequences straight from the source (no features), for
    language-model experiments."""
    lo, hi = len_range
    out = []
    for _ in range(n_utts):
        toks = source.sample(rng, int(rng.integers(lo, hi + 1)))
        out.append([source.vocab[t] for t in toks])
    return out
