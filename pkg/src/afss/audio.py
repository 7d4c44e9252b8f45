"""Waveforms, WAV I/O, resampling and spectral transforms.

All analysis uses a periodic Hann window with zero center padding, so a
signal of ``n`` samples yields ``n // hop_length + 1`` frames.  Spectral
matrices are time-major: ``[n_frames, n_bins]``.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import get_window, resample_poly

SAMPLE_RATE = 16000
N_FFT = 1024
HOP_LENGTH = 256
N_MELS = 80
GRIFFIN_LIM_ITERS = 32


class AudioFormatError(ValueError):
    """Raised when a file is not a readable PCM/float WAV."""


class ConfigurationError(ValueError):
    """Raised for inconsistent analysis parameters."""


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform contains non-finite samples")

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate

    def rms(self) -> float:
        if len(self) == 0:
            return 0.0
        return float(np.sqrt(np.mean(self.samples ** 2)))


@dataclass
class MelSpectrogram:
    frames: np.ndarray
    sample_rate: int = SAMPLE_RATE
    n_fft: int = N_FFT
    hop_length: int = HOP_LENGTH
    win_length: int = N_FFT

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def n_mels(self) -> int:
        return self.frames.shape[1]


def _samples(w) -> np.ndarray:
    if isinstance(w, Waveform):
        return w.samples
    return np.asarray(w, dtype=np.float64)


# ---------------------------------------------------------------------------
# WAV I/O

def load_wav(path) -> Waveform:
    """Read a WAV file as mono float samples in [-1, 1] at its native rate."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such audio file: {path}")
    try:
        rate, data = wavfile.read(path)
    except (ValueError, EOFError) as exc:
        raise AudioFormatError(f"{path}: {exc}") from exc

    if data.dtype == np.uint8:
        x = (data.astype(np.float64) - 128.0) / 128.0
    elif data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        # scipy left-justifies 24-bit PCM into int32
        x = data.astype(np.float64) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        x = data.astype(np.float64)
    else:
        raise AudioFormatError(f"{path}: unsupported sample type {data.dtype}")
    if x.ndim == 2:
        x = x.mean(axis=1)
    return Waveform(x, int(rate))


def save_wav(w: Waveform, path) -> None:
    """Write 16-bit PCM mono, hard-clipping to [-1, 1] first."""
    x = np.clip(w.samples, -1.0, 1.0)
    pcm = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
    wavfile.write(Path(path), int(w.sample_rate), pcm)


# ---------------------------------------------------------------------------
# Resampling

def fit_length(x: np.ndarray, length: int) -> np.ndarray:
    if x.shape[0] >= length:
        return x[:length]
    return np.pad(x, (0, length - x.shape[0]))


def resample_ratio(x: np.ndarray, ratio: float, length: int, max_denominator: int = 512) -> np.ndarray:
    """Polyphase resampling by ``ratio`` (output/input rate), fit to ``length``."""
    frac = Fraction(ratio).limit_denominator(max_denominator)
    if frac == 1:
        return fit_length(np.array(x, dtype=np.float64), length)
    y = resample_poly(x, frac.numerator, frac.denominator)
    return fit_length(y, length)


def resample(w: Waveform, target_rate: int) -> Waveform:
    if target_rate <= 0:
        raise ValueError(f"target_rate must be positive, got {target_rate}")
    if target_rate == w.sample_rate:
        return Waveform(w.samples.copy(), w.sample_rate)
    n_out = int(round(len(w) * target_rate / w.sample_rate))
    if len(w) == 0:
        return Waveform(np.zeros(0), target_rate)
    frac = Fraction(int(target_rate), int(w.sample_rate))
    y = resample_poly(w.samples, frac.numerator, frac.denominator)
    return Waveform(fit_length(y, n_out), target_rate)


def load_audio(path, sample_rate: int = SAMPLE_RATE) -> Waveform:
    """load_wav followed by resampling to the pipeline rate."""
    return resample(load_wav(path), sample_rate)


# ---------------------------------------------------------------------------
# STFT

def _window(n_fft: int, win_length: int) -> np.ndarray:
    if win_length > n_fft:
        raise ConfigurationError(f"win_length {win_length} exceeds n_fft {n_fft}")
    win = get_window("hann", win_length, fftbins=True)
    left = (n_fft - win_length) // 2
    return np.pad(win, (left, n_fft - win_length - left))


def stft(w, n_fft: int = N_FFT, hop_length: int = HOP_LENGTH, win_length: int | None = None) -> np.ndarray:
    """Complex STFT, shape ``[n_samples // hop_length + 1, n_fft // 2 + 1]``."""
    win_length = n_fft if win_length is None else win_length
    if hop_length <= 0 or hop_length > win_length:
        raise ConfigurationError(f"hop_length must be in (0, win_length], got {hop_length}")
    window = _window(n_fft, win_length)
    x = np.pad(_samples(w), (n_fft // 2, n_fft // 2))
    n_frames = 1 + (x.shape[0] - n_fft) // hop_length
    frames = np.lib.stride_tricks.sliding_window_view(x, n_fft)[::hop_length][:n_frames]
    return np.fft.rfft(frames * window, axis=1)


def istft(frames: np.ndarray, hop_length: int = HOP_LENGTH, win_length: int | None = None,
          length: int | None = None) -> np.ndarray:
    """Inverse of :func:`stft` by windowed overlap-add; returns samples."""
    n_frames, n_bins = frames.shape
    n_fft = 2 * (n_bins - 1)
    win_length = n_fft if win_length is None else win_length
    if hop_length <= 0 or hop_length > win_length:
        raise ConfigurationError(f"hop_length must be in (0, win_length], got {hop_length}")
    window = _window(n_fft, win_length)
    if length is None:
        length = (n_frames - 1) * hop_length

    total = n_fft + hop_length * (n_frames - 1)
    y = np.zeros(total)
    wsum = np.zeros(total)
    chunks = np.fft.irfft(frames, n=n_fft, axis=1) * window
    wsq = window ** 2
    for t in range(n_frames):
        s = t * hop_length
        y[s:s + n_fft] += chunks[t]
        wsum[s:s + n_fft] += wsq

    start = n_fft // 2
    y = y[start:start + length]
    wsum = wsum[start:start + length]
    if y.shape[0] and np.min(wsum[: min(length, total - start)]) < 1e-10:
        raise ConfigurationError("window overlap-add has gaps (NOLA violated)")
    y = y / np.where(wsum > 1e-10, wsum, 1.0)
    return fit_length(y, length)


# ---------------------------------------------------------------------------
# Mel analysis and Griffin-Lim

def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def mel_filterbank(sample_rate: int = SAMPLE_RATE, n_fft: int = N_FFT, n_mels: int = N_MELS,
                   fmin: float = 0.0, fmax: float | None = None) -> np.ndarray:
    """Triangular HTK-scale filters, shape ``[n_mels, n_fft // 2 + 1]``."""
    fmax = sample_rate / 2 if fmax is None else fmax
    freqs = np.linspace(0, sample_rate / 2, n_fft // 2 + 1)
    edges = _mel_to_hz(np.linspace(_hz_to_mel(fmin), _hz_to_mel(fmax), n_mels + 2))
    lower = (freqs[None, :] - edges[:-2, None]) / (edges[1:-1] - edges[:-2])[:, None]
    upper = (edges[2:, None] - freqs[None, :]) / (edges[2:] - edges[1:-1])[:, None]
    return np.maximum(0.0, np.minimum(lower, upper))


def mel_encode(w: Waveform, n_mels: int = N_MELS, n_fft: int = N_FFT,
               hop_length: int = HOP_LENGTH) -> MelSpectrogram:
    """Magnitude mel spectrogram ``[n_frames, n_mels]``."""
    mag = np.abs(stft(w, n_fft, hop_length))
    fb = mel_filterbank(w.sample_rate, n_fft, n_mels)
    return MelSpectrogram(mag @ fb.T, w.sample_rate, n_fft, hop_length, n_fft)


def mel_to_linear(m: MelSpectrogram) -> np.ndarray:
    fb = mel_filterbank(m.sample_rate, m.n_fft, m.n_mels)
    return np.maximum(0.0, m.frames @ np.linalg.pinv(fb).T)


def griffin_lim(magnitude: np.ndarray, n_iters: int = GRIFFIN_LIM_ITERS, hop_length: int = HOP_LENGTH,
                length: int | None = None) -> np.ndarray:
    """Phase retrieval from a linear magnitude STFT, starting from zero phase."""
    if n_iters < 1:
        raise ValueError("n_iters must be >= 1")
    n_fft = 2 * (magnitude.shape[1] - 1)
    if length is None:
        length = (magnitude.shape[0] - 1) * hop_length
    phase = np.ones_like(magnitude, dtype=np.complex128)
    for _ in range(n_iters):
        y = istft(magnitude * phase, hop_length, length=length)
        rebuilt = stft(y, n_fft, hop_length)
        phase = np.exp(1j * np.angle(rebuilt))
    return istft(magnitude * phase, hop_length, length=length)


def griffin_lim_decode(m: MelSpectrogram, n_iters: int = GRIFFIN_LIM_ITERS,
                       length: int | None = None) -> Waveform:
    if m.frames.size == 0:
        raise ValueError("cannot decode an empty spectrogram")
    mag = mel_to_linear(m)
    y = griffin_lim(mag, n_iters, m.hop_length, length)
    return Waveform(y, m.sample_rate)
