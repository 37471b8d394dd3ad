"""Syllable lexicon handling, transcript tokenization and corpus statistics.

Lexicon files are UTF-8 text, one entry per line::

    word<TAB>syl1 syl2 ...

Transcript files are ``utt_id<TAB>word word ...`` per line. Auxiliary
tokens (unknown, silence, noise, ...) carry angle brackets so they can
never collide with real syllables.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

UNK = "<unk>"
SIL = "<sil>"
AUX_TOKENS = frozenset(
    {UNK, SIL, "<laughter>", "<noise>", "<vocalized-noise>", "<unintelligible>"})


def is_aux(token: str) -> bool:
    return token.startswith("<") and token.endswith(">")


@dataclass
class SyllableLexicon:
    """Word -> syllable pronunciation map with syllable usage counts."""

    entries: dict[str, list[str]] = field(default_factory=dict)
    syllable_counts: dict[str, int] = field(default_factory=dict)
    aux_tokens: frozenset[str] = AUX_TOKENS

    @property
    def syllables(self) -> set[str]:
        out: set[str] = set()
        for sylls in self.entries.values():
            out.update(sylls)
        return out

    def validate(self) -> None:
        for word, sylls in self.entries.items():
            if not sylls:
                raise ValueError(f"word {word!r} has no syllables")
            for s in sylls:
                if not s or any(ch.isspace() for ch in s):
                    raise ValueError(f"bad syllable {s!r} for word {word!r}")
                if is_aux(s) and s not in self.aux_tokens:
                    raise ValueError(f"syllable {s!r} uses the reserved aux sigil")


@dataclass
class TokenizedUtterance:
    utt_id: str
    tokens: list[str]
    oov_count: int = 0

    def __post_init__(self):
        n_unk = sum(1 for t in self.tokens if t == UNK)
        if self.oov_count != n_unk:
            raise ValueError(
                f"oov_count {self.oov_count} != unk tokens {n_unk} in {self.utt_id}")


@dataclass
class CorpusStats:
    distinct_syllables: int
    total_syllable_instances: int
    oov_rate: float
    mean_syllables_per_word: float
    coverage_curve: list[tuple[int, float]]


def load_lexicon(path) -> SyllableLexicon:
    """Parse a lexicon file. Duplicate words keep the first pronunciation
    (with a warning); malformed lines raise with their line number."""
    entries: dict[str, list[str]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            if "\t" not in line:
                raise ValueError(f"{path}:{lineno}: missing TAB separator")
            word, _, rhs = line.partition("\t")
            sylls = rhs.split()
            if not word or not sylls:
                raise ValueError(f"{path}:{lineno}: empty word or syllable list")
            if word in entries:
                warnings.warn(f"{path}:{lineno}: duplicate word {word!r}, "
                              "keeping first pronunciation")
                continue
            entries[word] = sylls
    lex = SyllableLexicon(entries=entries)
    lex.validate()
    return lex


def save_lexicon(lex: SyllableLexicon, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for word in sorted(lex.entries):
            fh.write(f"{word}\t{' '.join(lex.entries[word])}\n")


def read_transcripts(path) -> list[tuple[str, list[str]]]:
    """Read ``utt_id<TAB>word ...`` lines; empty word sequences allowed."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            if "\t" not in line:
                raise ValueError(f"{path}:{lineno}: missing TAB separator")
            utt_id, _, rhs = line.partition("\t")
            if not utt_id:
                raise ValueError(f"{path}:{lineno}: empty utterance id")
            out.append((utt_id, rhs.split()))
    return out


def write_transcripts(items, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for utt_id, tokens in items:
            fh.write(f"{utt_id}\t{' '.join(tokens)}\n")


def count_syllables(lex: SyllableLexicon,
                    transcripts: list[tuple[str, list[str]]]) -> SyllableLexicon:
    """Populate syllable counts by expanding word transcripts through the
    full lexicon. Out-of-lexicon words contribute nothing."""
    counts: dict[str, int] = {}
    for _, words in transcripts:
        for word in words:
            for s in lex.entries.get(word, ()):
                counts[s] = counts.get(s, 0) + 1
    return SyllableLexicon(entries=lex.entries, syllable_counts=counts,
                           aux_tokens=lex.aux_tokens)


def _ranked_counts(lex: SyllableLexicon) -> list[tuple[str, int]]:
    # frequency descending, ties by token so reductions are reproducible
    return sorted(lex.syllable_counts.items(), key=lambda kv: (-kv[1], kv[0]))


def reduce_lexicon(lex: SyllableLexicon, *, top_k: int | None = None,
                   coverage: float | None = None) -> SyllableLexicon:
    """Keep only the most frequent syllables.

    Exactly one of top_k / coverage must be given. coverage(c) keeps the
    minimal K whose cumulative instance frequency reaches c. Words stay
    in the lexicon; dropped syllables become unk at tokenization time.
    """
    if (top_k is None) == (coverage is None):
        raise ValueError("give exactly one of top_k or coverage")
    ranked = _ranked_counts(lex)
    total = sum(c for _, c in ranked)
    if total == 0:
        raise ValueError("no frequency information")
    if top_k is not None:
        if not 1 <= top_k <= len(ranked):
            raise ValueError(f"top_k {top_k} out of range 1..{len(ranked)}")
        k = top_k
    else:
        if not 0 < coverage <= 1:
            raise ValueError(f"coverage {coverage} out of range (0, 1]")
        acc = 0
        k = len(ranked)
        for i, (_, c) in enumerate(ranked):
            acc += c
            if acc / total >= coverage:
                k = i + 1
                break
    kept = {tok: cnt for tok, cnt in ranked[:k]}
    return SyllableLexicon(entries=lex.entries, syllable_counts=kept,
                           aux_tokens=lex.aux_tokens)


def tokenize(utt_id: str, words: list[str], lex: SyllableLexicon,
             vocab: set[str]) -> TokenizedUtterance:
    """Expand words to syllables, mapping anything outside vocab to unk.
    Unknown words become a single unk token."""
    tokens: list[str] = []
    for word in words:
        sylls = lex.entries.get(word)
        if sylls is None:
            tokens.append(UNK)
            continue
        for s in sylls:
            tokens.append(s if s in vocab else UNK)
    oov = sum(1 for t in tokens if t == UNK)
    return TokenizedUtterance(utt_id=utt_id, tokens=tokens, oov_count=oov)


def stats(utts: list[TokenizedUtterance], total_word_count: int) -> CorpusStats:
    """Corpus-level counts over tokenized utterances.

    Syllable instances include unk substitutions (they stand for real
    syllables); other aux tokens are excluded. The coverage curve ranks
    actual syllables by instance frequency.
    """
    if not utts:
        raise ValueError("empty corpus")
    counts: dict[str, int] = {}
    total = 0
    oov = 0
    for utt in utts:
        for tok in utt.tokens:
            if tok == UNK:
                oov += 1
                total += 1
            elif is_aux(tok):
                continue
            else:
                counts[tok] = counts.get(tok, 0) + 1
                total += 1
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    syll_total = sum(c for _, c in ranked)
    curve = []
    acc = 0
    for i, (_, c) in enumerate(ranked):
        acc += c
        curve.append((i + 1, acc / syll_total if syll_total else 1.0))
    if total_word_count <= 0:
        raise ValueError("total_word_count must be positive")
    return CorpusStats(
        distinct_syllables=len(counts),
        total_syllable_instances=total,
        oov_rate=oov / total if total else 0.0,
        mean_syllables_per_word=total / total_word_count,
        coverage_curve=curve,
    )


def format_stats(st: CorpusStats, machine: bool = False) -> str:
    if machine:
        lines = [
            f"distinct_syllables={st.distinct_syllables}",
            f"total_syllable_instances={st.total_syllable_instances}",
            f"oov_rate={st.oov_rate:.6f}",
            f"mean_syllables_per_word={st.mean_syllables_per_word:.6f}",
        ]
        return "\n".join(lines) + "\n"
    lines = [
        f"distinct syllables        {st.distinct_syllables}",
        f"syllable instances        {st.total_syllable_instances}",
        f"OOV rate                  {100.0 * st.oov_rate:.2f}%",
        f"mean syllables per word   {st.mean_syllables_per_word:.3f}",
    ]
    return "\n".join(lines) + "\n"
