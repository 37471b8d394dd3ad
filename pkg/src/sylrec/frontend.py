"""MFCC feature extraction with per-utterance mean/variance normalization.

Pipeline per frame: pre-emphasis, Hamming window, magnitude spectrum,
mel filterbank, floored log, orthonormal DCT-II. Defaults give the
40-dimensional "hi-res" style configuration on 16 kHz mono input.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass, field

import numpy as np
from scipy.fft import dct

LOG_FLOOR = 1e-10


@dataclass
class MfccConfig:
    sample_rate_hz: int = 16000
    frame_length_ms: float = 25.0
    frame_shift_ms: float = 10.0
    fft_size: int = 512
    num_mel_bins: int = 40
    num_ceps: int = 40
    low_freq_hz: float = 20.0
    high_freq_hz: float = 7600.0
    preemphasis: float = 0.97
    dither: float = 0.0

    def __post_init__(self):
        if self.num_ceps > self.num_mel_bins:
            raise ValueError("num_ceps must not exceed num_mel_bins")
        if self.high_freq_hz > self.sample_rate_hz / 2:
            raise ValueError("high_freq_hz above Nyquist")

    @property
    def frame_samples(self) -> int:
        return int(round(self.sample_rate_hz * self.frame_length_ms / 1000.0))

    @property
    def shift_samples(self) -> int:
        return int(round(self.sample_rate_hz * self.frame_shift_ms / 1000.0))


@dataclass
class FeatureMatrix:
    utt_id: str
    frames: np.ndarray  # (T, D)
    frame_shift_ms: float = 10.0
    frame_length_ms: float = 25.0

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2:
            raise ValueError("frames must be 2-D")
        if not np.all(np.isfinite(self.frames)):
            raise ValueError(f"non-finite feature values in {self.utt_id}")


def mel_scale(freq_hz):
    return 2595.0 * np.log10(1.0 + np.asarray(freq_hz, dtype=np.float64) / 700.0)


def mel_filterbank(cfg: MfccConfig) -> np.ndarray:
    """Triangular filters (num_mel_bins, fft_size//2 + 1), triangles laid
    out uniformly on the mel axis and evaluated at FFT bin frequencies."""
    n_bins = cfg.fft_size // 2 + 1
    bin_hz = np.arange(n_bins) * cfg.sample_rate_hz / cfg.fft_size
    bin_mel = mel_scale(bin_hz)
    edges = np.linspace(mel_scale(cfg.low_freq_hz), mel_scale(cfg.high_freq_hz),
                        cfg.num_mel_bins + 2)
    fb = np.zeros((cfg.num_mel_bins, n_bins))
    for m in range(cfg.num_mel_bins):
        left, center, right = edges[m], edges[m + 1], edges[m + 2]
        up = (bin_mel - left) / (center - left)
        down = (right - bin_mel) / (right - center)
        fb[m] = np.maximum(0.0, np.minimum(up, down))
    return fb


def filter_center_freqs(cfg: MfccConfig) -> np.ndarray:
    """Center frequency in Hz of each mel filter."""
    edges = np.linspace(mel_scale(cfg.low_freq_hz), mel_scale(cfg.high_freq_hz),
                        cfg.num_mel_bins + 2)
    return 700.0 * (10.0 ** (edges[1:-1] / 2595.0) - 1.0)


def frame_signal(audio: np.ndarray, cfg: MfccConfig) -> np.ndarray:
    """Cut audio into (T, frame_samples) with T = (N - len)//shift + 1."""
    n = len(audio)
    flen, shift = cfg.frame_samples, cfg.shift_samples
    if n < flen:
        raise ValueError(f"audio has {n} samples, shorter than one "
                         f"{flen}-sample frame")
    t = (n - flen) // shift + 1
    idx = np.arange(flen)[None, :] + shift * np.arange(t)[:, None]
    return audio[idx]


def filterbank_energies(audio: np.ndarray, cfg: MfccConfig,
                        rng: np.random.Generator | None = None) -> np.ndarray:
    """Log mel filterbank energies (T, num_mel_bins) before the DCT."""
    audio = np.asarray(audio, dtype=np.float64)
    if not np.all(np.isfinite(audio)):
        raise ValueError("non-finite audio samples")
    frames = frame_signal(audio, cfg).copy()
    if cfg.dither > 0:
        rng = rng or np.random.default_rng(0)
        frames += cfg.dither * rng.standard_normal(frames.shape)
    frames[:, 1:] -= cfg.preemphasis * frames[:, :-1]
    frames[:, 0] *= 1.0 - cfg.preemphasis
    frames *= np.hamming(cfg.frame_samples)
    spec = np.abs(np.fft.rfft(frames, n=cfg.fft_size, axis=1))
    mel = spec @ mel_filterbank(cfg).T
    return np.log(np.maximum(mel, LOG_FLOOR))


def mfcc(audio, cfg: MfccConfig | None = None, utt_id: str = "") -> FeatureMatrix:
    cfg = cfg or MfccConfig()
    logmel = filterbank_energies(audio, cfg)
    ceps = dct(logmel, type=2, norm="ortho", axis=1)[:, :cfg.num_ceps]
    return FeatureMatrix(utt_id=utt_id, frames=ceps,
                         frame_shift_ms=cfg.frame_shift_ms,
                         frame_length_ms=cfg.frame_length_ms)


def cmvn(feats: FeatureMatrix) -> FeatureMatrix:
    """Normalize each dimension to zero mean, unit variance over the
    utterance; near-constant dimensions are only mean-subtracted."""
    x = feats.frames
    mean = x.mean(axis=0)
    var = x.var(axis=0)
    out = x - mean
    live = var >= 1e-10
    out[:, live] /= np.sqrt(var[live])
    return FeatureMatrix(utt_id=feats.utt_id, frames=out,
                         frame_shift_ms=feats.frame_shift_ms,
                         frame_length_ms=feats.frame_length_ms)


def read_wav(path, expected_rate: int = 16000) -> np.ndarray:
    """Load 16-bit mono PCM audio as float64 samples."""
    with wave.open(str(path), "rb") as wf:
        if wf.getnchannels() != 1:
            raise ValueError(f"{path}: expected mono, got "
                             f"{wf.getnchannels()} channels")
        if wf.getsampwidth() != 2:
            raise ValueError(f"{path}: expected 16-bit PCM")
        if wf.getframerate() != expected_rate:
            raise ValueError(f"{path}: sample rate {wf.getframerate()} != "
                             f"expected {expected_rate}")
        raw = wf.readframes(wf.getnframes())
    return np.frombuffer(raw, dtype="<i2").astype(np.float64)
