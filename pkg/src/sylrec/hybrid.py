"""Prior-driven decoding: syllable-loop HMMs composed with an n-gram LM.

Each syllable is a left-to-right HMM with self-loops (no phone
identity). LM scores enter on the arcs between syllables; an optional
unk garbage unit (1 state, flat emission score) absorbs out-of-set
material, and an optional silence unit can be inserted between
syllables for a fixed penalty without touching the LM context. Search
is beam-pruned Viterbi token passing over (LM state, unit, HMM state).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from sylrec import kernels
from sylrec.corpus import SIL, UNK
from sylrec.lm import (LmAutomaton, NGramModel, compile_automaton, dumps_arpa,
                       loads_arpa)


class DecodeError(RuntimeError):
    pass


@dataclass
class HmmConfig:
    num_states: int = 3
    self_loop_prob: float = 0.5
    use_silence: bool = False
    silence_penalty: float = math.log(0.1)

    def __post_init__(self):
        if self.num_states < 1:
            raise ValueError("num_states must be >= 1")
        if not 0.0 < self.self_loop_prob < 1.0:
            raise ValueError("self_loop_prob must lie in (0, 1)")


@dataclass
class SyllableHmm:
    token: str
    num_states: int
    log_self: float
    log_forward: float


@dataclass
class DecodeGraph:
    """Composition of the syllable HMM loop with the LM automaton.

    units lists the decodable HMMs in emission-column order (sorted
    syllables, then unk if the LM knows it, then silence if enabled).
    Nodes are (LM state, unit, HMM position); node/arc counts report
    that composed size.
    """
    units: list[SyllableHmm]
    automaton: LmAutomaton
    config: HmmConfig
    syllables: list[str] = field(default_factory=list)

    @property
    def num_emission_columns(self) -> int:
        return sum(u.num_states for u in self.units)

    @property
    def node_count(self) -> int:
        return len(self.automaton.states) * self.num_emission_columns

    @property
    def arc_count(self) -> int:
        q = len(self.automaton.states)
        u = len(self.units)
        intra = sum(2 * h.num_states - 1 for h in self.units)
        return q * intra + q * u * u

    def kernel_arrays(self):
        nstates = np.array([u.num_states for u in self.units], dtype=np.int64)
        col0 = np.concatenate(([0], np.cumsum(nstates)[:-1])).astype(np.int64)
        loop_lp = np.array([u.log_self for u in self.units])
        fwd_lp = np.array([u.log_forward for u in self.units])
        return nstates, col0, loop_lp, fwd_lp


def build_graph(syllables, lm: NGramModel, config: HmmConfig | None = None
                ) -> DecodeGraph:
    """Compose the active syllable set with the LM. Every syllable must
    be scorable by the LM (directly or through unk)."""
    config = config or HmmConfig()
    syllables = sorted(set(syllables))
    if not syllables:
        raise ValueError("empty syllable set")
    log_self = math.log(config.self_loop_prob)
    log_fwd = math.log(1.0 - config.self_loop_prob)
    units = [SyllableHmm(s, config.num_states, log_self, log_fwd)
             for s in syllables]
    lm_tokens = list(syllables)
    if UNK in lm.vocab and UNK not in syllables:
        units.append(SyllableHmm(UNK, 1, log_self, log_fwd))
        lm_tokens.append(UNK)
    automaton = compile_automaton(lm, lm_tokens)
    if config.use_silence:
        units.append(SyllableHmm(SIL, 1, log_self, log_fwd))
        q = len(automaton.states)
        automaton = LmAutomaton(
            tokens=automaton.tokens + [SIL],
            states=automaton.states,
            logp=np.hstack([automaton.logp,
                            np.full((q, 1), config.silence_penalty)]),
            next_state=np.hstack([automaton.next_state,
                                  np.arange(q, dtype=np.int64)[:, None]]),
            final_logp=automaton.final_logp,
            use_final=automaton.use_final,
            start=automaton.start)
    return DecodeGraph(units=units, automaton=automaton, config=config,
                       syllables=syllables)


@dataclass
class DecodeResult:
    tokens: list[str]                       # collapsed syllable sequence
    score: float
    alignment: list[tuple[str, int, int]]   # (unit, start, end), 1-based


def viterbi_decode(graph: DecodeGraph, emissions: np.ndarray,
                   beam: float = math.inf, max_active: int = 1 << 40,
                   acoustic_scale: float = 1.0) -> DecodeResult:
    """Best path through the graph for (T, columns) emission log scores.

    beam=inf is exact; a finite beam drops tokens more than beam below
    the per-frame best, and max_active caps the surviving token count.
    The alignment spans tile [1, T] and include unk/silence segments;
    silence is dropped from the token sequence.
    """
    emissions = np.ascontiguousarray(emissions, dtype=np.float64)
    if emissions.ndim != 2 or emissions.shape[1] != graph.num_emission_columns:
        raise ValueError(f"emission matrix must be (T, "
                         f"{graph.num_emission_columns})")
    if emissions.shape[0] < 1:
        raise ValueError("need at least one frame")
    if not (beam > 0):
        raise ValueError("beam must be positive (use inf for exact search)")
    if acoustic_scale != 1.0:
        emissions = emissions * acoustic_scale
    nstates, col0, loop_lp, fwd_lp = graph.kernel_arrays()
    auto = graph.automaton
    score, path_u, path_entry, ok = kernels.viterbi_pass(
        emissions, col0, nstates, loop_lp, fwd_lp,
        np.ascontiguousarray(auto.logp),
        np.ascontiguousarray(auto.next_state),
        np.ascontiguousarray(auto.final_logp), auto.use_final,
        auto.start, float(beam), int(max_active))
    if not ok:
        raise DecodeError(
            "no complete hypothesis survived the search; increase the beam "
            "or max_active, or check that the utterance is long enough for "
            "the minimum unit duration")
    alignment = []
    start = 0
    for t in range(1, emissions.shape[0] + 1):
        if t == emissions.shape[0] or path_entry[t]:
            alignment.append((graph.units[int(path_u[start])].token,
                              start + 1, t))
            start = t
    tokens = [u for u, _, _ in alignment if u != SIL]
    return DecodeResult(tokens=tokens, score=float(score),
                        alignment=alignment)


def format_alignment(utt_id: str, result: DecodeResult) -> str:
    return "".join(f"{utt_id} {u} {s} {e}\n" for u, s, e in result.alignment)


# ---------------------------------------------------------------------------
# emission models
# ---------------------------------------------------------------------------

@dataclass
class GaussianEmissionModel:
    """Per-column diagonal Gaussians; flat columns (the unk garbage
    model) return a constant score regardless of the observation."""
    means: np.ndarray       # (E, D)
    variances: np.ndarray   # (E, D)
    flat_scores: np.ndarray  # (E,), NaN where the column is Gaussian

    def score(self, frames: np.ndarray) -> np.ndarray:
        x = np.asarray(frames, dtype=np.float64)
        inv = 1.0 / self.variances
        const = -0.5 * (np.log(2.0 * np.pi * self.variances).sum(axis=1))
        ll = (-0.5 * ((x * x) @ inv.T)
              + x @ (self.means * inv).T
              - 0.5 * ((self.means ** 2) * inv).sum(axis=1)
              + const)
        flat = np.isfinite(self.flat_scores)
        if flat.any():
            ll[:, flat] = self.flat_scores[flat]
        return ll


def fit_gaussian_emissions(graph: DecodeGraph, frames_by_column,
                           dim: int, var_floor: float = 1e-3
                           ) -> GaussianEmissionModel:
    """Estimate per-column Gaussians from assigned frames.

    frames_by_column maps emission column -> (N, D) array. Columns of
    1-state unk/silence units get a flat score equal to the expected
    log-density of the pooled global Gaussian, a crude background
    model. Columns with no data fall back to the global statistics.
    """
    e = graph.num_emission_columns
    all_frames = [f for f in frames_by_column.values() if len(f)]
    if not all_frames:
        raise ValueError("no frames to fit")
    pooled = np.concatenate(all_frames, axis=0)
    g_mean = pooled.mean(axis=0)
    g_var = np.maximum(pooled.var(axis=0), var_floor)
    means = np.tile(g_mean, (e, 1))
    variances = np.tile(g_var, (e, 1))
    flat_scores = np.full(e, np.nan)
    for col, rows in frames_by_column.items():
        if len(rows) >= 2:
            means[col] = rows.mean(axis=0)
            variances[col] = np.maximum(rows.var(axis=0), var_floor)
        elif len(rows) == 1:
            means[col] = rows[0]
    nstates, col0, _, _ = graph.kernel_arrays()
    for ui, unit in enumerate(graph.units):
        if unit.token in (UNK, SIL):
            col = int(col0[ui])
            flat_scores[col] = -0.5 * float(
                dim + np.log(2.0 * np.pi * g_var).sum())
    return GaussianEmissionModel(means=means, variances=variances,
                                 flat_scores=flat_scores)


def posterior_emissions(graph: DecodeGraph, logpost: np.ndarray,
                        token_index: dict[str, int]) -> np.ndarray:
    """Adapt per-token log posteriors (T, V+1 with blank at 0) to
    emission columns by spreading each token's mass uniformly over its
    HMM states. Units without a posterior column (silence) use blank."""
    t = logpost.shape[0]
    out = np.empty((t, graph.num_emission_columns))
    nstates, col0, _, _ = graph.kernel_arrays()
    for ui, unit in enumerate(graph.units):
        idx = token_index.get(unit.token, 0)
        col = int(col0[ui])
        s = int(nstates[ui])
        out[:, col:col + s] = (logpost[:, idx] - math.log(s))[:, None]
    return out


# ---------------------------------------------------------------------------
# graph files: JSON header line + embedded ARPA text
# ---------------------------------------------------------------------------

def save_graph(graph: DecodeGraph, lm: NGramModel, path) -> None:
    header = {
        "format": "sylrec-graph",
        "version": 1,
        "syllables": graph.syllables,
        "num_states": graph.config.num_states,
        "self_loop_prob": graph.config.self_loop_prob,
        "use_silence": graph.config.use_silence,
        "silence_penalty": graph.config.silence_penalty,
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header) + "\n")
        fh.write(dumps_arpa(lm))


def load_graph(path) -> DecodeGraph:
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
        rest = fh.read()
    try:
        header = json.loads(first)
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: bad graph header: {exc}") from None
    if header.get("format") != "sylrec-graph":
        raise ValueError(f"{path}: not a sylrec graph file")
    lm = loads_arpa(rest)
    cfg = HmmConfig(num_states=header["num_states"],
                    self_loop_prob=header["self_loop_prob"],
                    use_silence=header["use_silence"],
                    silence_penalty=header["silence_penalty"])
    return build_graph(header["syllables"], lm, cfg)
