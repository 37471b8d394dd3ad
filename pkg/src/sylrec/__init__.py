"""Syllable speech recognition toolkit.

Two decoding routes over shared syllable units: a prior-driven hybrid
(syllable lexicon + backoff n-gram LM + Viterbi token passing) and an
end-to-end CTC-trained bidirectional LSTM, plus a synthetic experiment
harness that runs both across a reduced/full vocabulary grid.
"""

__version__ = "0.1.0"
