"""Syllable error-rate scoring via minimum edit distance.

The rate is conventionally called WER even though the units here are
syllables. Alignments are deterministic: the backtrace prefers
match > substitution > deletion > insertion.
"""

from __future__ import annotations

from dataclasses import dataclass

from sylrec.corpus import UNK


@dataclass
class WerReport:
    substitutions: int
    deletions: int
    insertions: int
    ref_len: int
    alignment: list[tuple[str | None, str | None, str]] | None = None

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    @property
    def wer(self) -> float:
        return self.errors / self.ref_len

    def format(self) -> str:
        return (f"%WER {100.0 * self.wer:.2f} "
                f"[ {self.errors} / {self.ref_len}, "
                f"{self.insertions} ins, {self.deletions} del, "
                f"{self.substitutions} sub ]")


def wer(ref: list[str], hyp: list[str], keep_alignment: bool = True) -> WerReport:
    """Unit-cost Levenshtein alignment of hyp against a non-empty ref."""
    if not ref:
        raise ValueError("empty reference: error rate undefined")
    n, m = len(ref), len(hyp)
    dp = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        dp[i][0] = i
    for j in range(1, m + 1):
        dp[0][j] = j
    for i in range(1, n + 1):
        ri = ref[i - 1]
        row = dp[i]
        prev = dp[i - 1]
        for j in range(1, m + 1):
            sub = prev[j - 1] + (ri != hyp[j - 1])
            dele = prev[j] + 1
            ins = row[j - 1] + 1
            row[j] = min(sub, dele, ins)

    subs = dels = inss = 0
    align: list[tuple[str | None, str | None, str]] = []
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and ref[i - 1] == hyp[j - 1] \
                and dp[i][j] == dp[i - 1][j - 1]:
            align.append((ref[i - 1], hyp[j - 1], "match"))
            i, j = i - 1, j - 1
        elif i > 0 and j > 0 and dp[i][j] == dp[i - 1][j - 1] + 1 \
                and ref[i - 1] != hyp[j - 1]:
            align.append((ref[i - 1], hyp[j - 1], "sub"))
            subs += 1
            i, j = i - 1, j - 1
        elif i > 0 and dp[i][j] == dp[i - 1][j] + 1:
            align.append((ref[i - 1], None, "del"))
            dels += 1
            i -= 1
        else:
            align.append((None, hyp[j - 1], "ins"))
            inss += 1
            j -= 1
    align.reverse()
    return WerReport(substitutions=subs, deletions=dels, insertions=inss,
                     ref_len=n, alignment=align if keep_alignment else None)


def corpus_wer(pairs: list[tuple[list[str], list[str]]]) -> WerReport:
    """Aggregate error counts over (ref, hyp) pairs; the corpus rate is
    the ratio of totals, not the mean of per-utterance rates."""
    if not pairs:
        raise ValueError("no utterance pairs to score")
    subs = dels = inss = ref_len = 0
    for ref, hyp in pairs:
        rep = wer(ref, hyp, keep_alignment=False)
        subs += rep.substitutions
        dels += rep.deletions
        inss += rep.insertions
        ref_len += rep.ref_len
    return WerReport(substitutions=subs, deletions=dels, insertions=inss,
                     ref_len=ref_len)


def map_oov_to_unk(tokens: list[str], vocab: set[str]) -> list[str]:
    """Replace tokens outside vocab with unk (reduced-set reference mode)."""
    return [t if t in vocab or t == UNK else UNK for t in tokens]


def score_transcripts(refs: dict[str, list[str]], hyps: dict[str, list[str]],
                      vocab: set[str] | None = None,
                      map_oov_ref: bool = True):
    """Score hyp transcripts against refs keyed by utterance id.

    Returns (per_utt: list of (utt_id, WerReport), corpus: WerReport).
    Missing hypotheses score as empty (all deletions). When vocab is
    given and map_oov_ref is on, reference tokens outside vocab are
    mapped to unk first.
    """
    per_utt = []
    pairs = []
    for utt_id in sorted(refs):
        ref = refs[utt_id]
        if vocab is not None and map_oov_ref:
            ref = map_oov_to_unk(ref, vocab)
        hyp = hyps.get(utt_id, [])
        rep = wer(ref, hyp, keep_alignment=False)
        per_utt.append((utt_id, rep))
        pairs.append((ref, hyp))
    return per_utt, corpus_wer(pairs)
