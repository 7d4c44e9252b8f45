"""Acoustic transformation suite: pitch shift, time stretch, tanh distortion, RawBoost.

Each transform takes a :class:`~afss.audio.Waveform` and an explicit
``numpy.random.Generator`` and is deterministic given that generator.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.signal import fftconvolve, firwin2

from .audio import HOP_LENGTH, N_FFT, Waveform, istft, resample_ratio, stft


class TransformKind(str, enum.Enum):
    PITCH_SHIFT = "PitchShift"
    TIME_STRETCH = "TimeStretch"
    TANH_DISTORTION = "TanhDistortion"
    RAWBOOST = "RawBoost"


ALL_KINDS = tuple(TransformKind)

CONVOLUTIVE = "convolutive"
IMPULSIVE = "impulsive"
ADDITIVE = "additive"
RAWBOOST_ALGOS = (CONVOLUTIVE, IMPULSIVE, ADDITIVE)


@dataclass(frozen=True)
class RawBoostConfig:
    """Parameter ranges for the three RawBoost algorithms.

    Gains are notch attenuations in dB.  ``n_orders > 1`` adds the
    higher-order (non-linear) convolutive terms, each attenuated by a bias
    drawn from ``[min_bias_lin_nonlin, max_bias_lin_nonlin]`` dB.
    """

    n_bands: int = 5
    min_f: float = 20.0
    max_f: float = 8000.0
    min_bw: float = 100.0
    max_bw: float = 1000.0
    min_coeff: int = 301
    max_coeff: int = 601
    min_g: float = 10.0
    max_g: float = 40.0
    n_orders: int = 1
    min_bias_lin_nonlin: float = 5.0
    max_bias_lin_nonlin: float = 20.0
    snr_min: float = 10.0
    snr_max: float = 40.0
    p: float = 10.0
    g_sd: float = 2.0
    algo_set: tuple[str, ...] = (CONVOLUTIVE, ADDITIVE)

    def __post_init__(self):
        if self.n_bands < 1:
            raise ValueError("n_bands must be >= 1")
        if not self.min_f < self.max_f:
            raise ValueError("min_f must be below max_f")
        if not 0 < self.min_bw <= self.max_bw:
            raise ValueError("bandwidth range must be positive and ordered")
        if not 3 <= self.min_coeff <= self.max_coeff:
            raise ValueError("coefficient range must be ordered and >= 3")
        if not 0 <= self.min_g <= self.max_g:
            raise ValueError("gain range must be non-negative and ordered")
        if self.n_orders < 1:
            raise ValueError("n_orders must be >= 1")
        if not self.snr_min <= self.snr_max:
            raise ValueError("SNR range is empty")
        if not 0 <= self.p <= 100:
            raise ValueError("p must be a percentage")
        unknown = set(self.algo_set) - set(RAWBOOST_ALGOS)
        if unknown:
            raise ValueError(f"unknown RawBoost algorithms: {sorted(unknown)}")
        # canonical order so configs compare equal regardless of input order
        object.__setattr__(self, "algo_set", tuple(a for a in RAWBOOST_ALGOS if a in self.algo_set))


Interval = tuple[float, float]


@dataclass(frozen=True)
class IntensityPreset:
    level: int
    pitch_shift_semitones: Interval
    time_stretch_rate: Interval
    tanh_distortion_amount: Interval
    rawboost: RawBoostConfig = field(default_factory=RawBoostConfig)

    def __post_init__(self):
        for name in ("pitch_shift_semitones", "time_stretch_rate", "tanh_distortion_amount"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name}: empty interval [{lo}, {hi}]")
            object.__setattr__(self, name, (float(lo), float(hi)))
        lo, hi = self.tanh_distortion_amount
        if lo < 0 or hi > 1:
            raise ValueError("tanh_distortion_amount must lie in [0, 1]")
        if self.time_stretch_rate[0] <= 0:
            raise ValueError("time_stretch_rate must be positive")
        if max(abs(v) for v in self.pitch_shift_semitones) > 12:
            raise ValueError("pitch shift limited to +/-12 semitones")

    def interval(self, kind: TransformKind) -> Interval | None:
        return {
            TransformKind.PITCH_SHIFT: self.pitch_shift_semitones,
            TransformKind.TIME_STRETCH: self.time_stretch_rate,
            TransformKind.TANH_DISTORTION: self.tanh_distortion_amount,
        }.get(TransformKind(kind))


LEVEL1 = {
    TransformKind.PITCH_SHIFT: (-0.5, 0.5),
    TransformKind.TIME_STRETCH: (0.9, 1.1),
    TransformKind.TANH_DISTORTION: (0.15, 0.6),
}
# width multiplier applied around the level-1 midpoints
LEVEL_WIDTH = {0: 0.25, 1: 1.0, 2: 2.0, 3: 3.0}
_CLAMP = {
    TransformKind.PITCH_SHIFT: (-12.0, 12.0),
    TransformKind.TIME_STRETCH: (0.05, np.inf),
    TransformKind.TANH_DISTORTION: (0.0, 1.0),
}


def intensity_preset(level: int, rawboost: RawBoostConfig | None = None) -> IntensityPreset:
    """Preset for intensity ``level`` in {0, 1, 2, 3}."""
    if level not in LEVEL_WIDTH:
        raise ValueError(f"intensity level must be 0..3, got {level}")
    scale = LEVEL_WIDTH[level]
    ranges = {}
    for kind, (lo, hi) in LEVEL1.items():
        if level == 1:
            ranges[kind] = (lo, hi)
            continue
        mid, half = (lo + hi) / 2, (hi - lo) / 2 * scale
        cmin, cmax = _CLAMP[kind]
        ranges[kind] = (round(max(cmin, mid - half), 10), round(min(cmax, mid + half), 10))
    return IntensityPreset(
        level=level,
        pitch_shift_semitones=ranges[TransformKind.PITCH_SHIFT],
        time_stretch_rate=ranges[TransformKind.TIME_STRETCH],
        tanh_distortion_amount=ranges[TransformKind.TANH_DISTORTION],
        rawboost=rawboost or RawBoostConfig(),
    )


def preset_table(rawboost: RawBoostConfig | None = None) -> dict[int, IntensityPreset]:
    return {level: intensity_preset(level, rawboost) for level in LEVEL_WIDTH}


# ---------------------------------------------------------------------------
# Phase vocoder

def _phase_vocoder(x: np.ndarray, rate: float, n_fft: int = N_FFT, hop_length: int = HOP_LENGTH) -> np.ndarray:
    D = stft(x, n_fft, hop_length)
    n_frames, n_bins = D.shape
    steps = np.arange(0, n_frames, rate)
    D = np.concatenate([D, np.zeros((2, n_bins), dtype=D.dtype)])
    advance = 2 * np.pi * hop_length * np.arange(n_bins) / n_fft

    out = np.empty((steps.shape[0], n_bins), dtype=np.complex128)
    phase = np.angle(D[0])
    for t, step in enumerate(steps):
        i = int(step)
        frac = step - i
        left, right = D[i], D[i + 1]
        mag = (1.0 - frac) * np.abs(left) + frac * np.abs(right)
        out[t] = mag * np.exp(1j * phase)
        dphase = np.angle(right) - np.angle(left) - advance
        dphase -= 2 * np.pi * np.round(dphase / (2 * np.pi))
        phase = phase + advance + dphase
    return istft(out, hop_length, length=int(round(x.shape[0] / rate)))


def time_stretch(w: Waveform, rate: float, rng: np.random.Generator | None = None) -> Waveform:
    """Change duration by playback-speed factor ``rate`` keeping pitch.

    Output length is ``round(n / rate)``.
    """
    if rate <= 0:
        raise ValueError(f"rate must be positive, got {rate}")
    if rate == 1.0:
        return Waveform(w.samples.copy(), w.sample_rate)
    return Waveform(_phase_vocoder(w.samples, rate), w.sample_rate)


def pitch_shift(w: Waveform, semitones: float, rng: np.random.Generator | None = None) -> Waveform:
    """Shift pitch by ``semitones`` keeping the length exactly."""
    if abs(semitones) > 12:
        raise ValueError(f"|semitones| must be <= 12, got {semitones}")
    if semitones == 0:
        return Waveform(w.samples.copy(), w.sample_rate)
    factor = 2.0 ** (semitones / 12.0)
    stretched = _phase_vocoder(w.samples, 1.0 / factor)
    y = resample_ratio(stretched, len(w) / len(stretched), len(w))
    return Waveform(y, w.sample_rate)


def tanh_distortion(w: Waveform, amount: float, rng: np.random.Generator | None = None) -> Waveform:
    """Soft clipping ``tanh(g * x)`` with drive ``g = 10 ** (2 * amount)``, RMS preserved."""
    if not 0.0 <= amount <= 1.0:
        raise ValueError(f"amount must be in [0, 1], got {amount}")
    gain = 10.0 ** (2.0 * amount)
    y = np.tanh(gain * w.samples)
    rms_in, rms_out = w.rms(), float(np.sqrt(np.mean(y ** 2))) if len(w) else 0.0
    if rms_out > 0:
        y = y * (rms_in / rms_out)
    return Waveform(y, w.sample_rate)


# ---------------------------------------------------------------------------
# RawBoost

def _norm_if_clipping(y: np.ndarray) -> np.ndarray:
    peak = np.max(np.abs(y)) if y.size else 0.0
    return y / peak if peak > 1.0 else y


def notch_filter(cfg: RawBoostConfig, sample_rate: int, rng: np.random.Generator) -> np.ndarray:
    """Linear-phase FIR with ``cfg.n_bands`` notches.

    The band ``[min_f, max_f]`` is split into ``n_bands`` equal slots and one
    notch is placed per slot (random center, width and attenuation), kept a
    transition width away from the slot edges so neighbouring notches stay
    separate.
    """
    nyq = sample_rate / 2.0
    n_taps = int(rng.integers(cfg.min_coeff, cfg.max_coeff + 1))
    n_taps += 1 - n_taps % 2
    transition = 3.3 * sample_rate / n_taps

    grid = np.linspace(0.0, nyq, 4097)
    gain = np.ones_like(grid)
    edges = np.linspace(cfg.min_f, min(cfg.max_f, nyq), cfg.n_bands + 1)
    for lo, hi in zip(edges[:-1], edges[1:]):
        room = max(hi - lo - 2 * transition, 1.0)
        bw = min(rng.uniform(cfg.min_bw, cfg.max_bw), room)
        fc = rng.uniform(lo + transition + bw / 2, max(hi - transition - bw / 2, lo + transition + bw / 2))
        atten = 10.0 ** (-rng.uniform(cfg.min_g, cfg.max_g) / 20.0)
        gain[np.abs(grid - fc) <= bw / 2] *= atten
    return firwin2(n_taps, grid, gain, fs=sample_rate)


def _apply_fir(x: np.ndarray, b: np.ndarray) -> np.ndarray:
    return fftconvolve(x, b, mode="same")


def convolutive_noise(x: np.ndarray, cfg: RawBoostConfig, sample_rate: int, rng: np.random.Generator) -> np.ndarray:
    y = np.zeros_like(x)
    for order in range(1, cfg.n_orders + 1):
        b = notch_filter(cfg, sample_rate, rng)
        term = _apply_fir(x ** order, b)
        if order > 1:
            term *= 10.0 ** (-rng.uniform(cfg.min_bias_lin_nonlin, cfg.max_bias_lin_nonlin) / 20.0)
        y += term
    if cfg.n_orders > 1:
        y -= y.mean()
    return _norm_if_clipping(y)


def impulsive_noise(x: np.ndarray, cfg: RawBoostConfig, rng: np.random.Generator) -> np.ndarray:
    """Signal-dependent impulses on ``cfg.p`` percent of the samples."""
    y = x.copy()
    n = int(round(x.shape[0] * cfg.p / 100.0))
    idx = rng.permutation(x.shape[0])[:n]
    f_r = (2 * rng.random(n) - 1) * (2 * rng.random(n) - 1)
    y[idx] = x[idx] + cfg.g_sd * x[idx] * f_r
    return _norm_if_clipping(y)


def additive_noise(x: np.ndarray, cfg: RawBoostConfig, sample_rate: int, rng: np.random.Generator) -> np.ndarray:
    """Coloured stationary noise at an SNR drawn from ``[snr_min, snr_max]``."""
    snr = rng.uniform(cfg.snr_min, cfg.snr_max)
    noise = _apply_fir(rng.standard_normal(x.shape[0]), notch_filter(cfg, sample_rate, rng))
    signal_norm, noise_norm = np.linalg.norm(x), np.linalg.norm(noise)
    if signal_norm == 0.0 or noise_norm == 0.0:
        return x.copy()
    noise *= signal_norm / noise_norm / 10.0 ** (snr / 20.0)
    return x + noise


def rawboost(w: Waveform, cfg: RawBoostConfig, rng: np.random.Generator) -> Waveform:
    """Apply the enabled algorithms in order convolutive, impulsive, additive."""
    x = w.samples.copy()
    if CONVOLUTIVE in cfg.algo_set:
        x = convolutive_noise(x, cfg, w.sample_rate, rng)
    if IMPULSIVE in cfg.algo_set:
        x = impulsive_noise(x, cfg, rng)
    if ADDITIVE in cfg.algo_set:
        x = additive_noise(x, cfg, w.sample_rate, rng)
    return Waveform(_norm_if_clipping(x), w.sample_rate)


# ---------------------------------------------------------------------------
# Random selection

def sample_transform(kind_pool, preset: IntensityPreset, rng: np.random.Generator) -> tuple[TransformKind, dict]:
    """Draw a kind uniformly from ``kind_pool`` and bind its parameters."""
    pool = sorted({TransformKind(k) for k in kind_pool}, key=ALL_KINDS.index)
    if not pool:
        raise ValueError("kind_pool must not be empty")
    kind = pool[int(rng.integers(len(pool)))]
    if kind is TransformKind.RAWBOOST:
        # RawBoost draws its own parameters; binding a seed makes the log replayable
        return kind, {"seed": int(rng.integers(0, 2**63 - 1))}
    lo, hi = preset.interval(kind)
    value = float(rng.uniform(lo, hi))
    key = {
        TransformKind.PITCH_SHIFT: "semitones",
        TransformKind.TIME_STRETCH: "rate",
        TransformKind.TANH_DISTORTION: "amount",
    }[kind]
    return kind, {key: value}


def apply_transform(w: Waveform, kind: TransformKind, params: dict, preset: IntensityPreset) -> Waveform:
    kind = TransformKind(kind)
    if kind is TransformKind.PITCH_SHIFT:
        return pitch_shift(w, params["semitones"])
    if kind is TransformKind.TIME_STRETCH:
        return time_stretch(w, params["rate"])
    if kind is TransformKind.TANH_DISTORTION:
        return tanh_distortion(w, params["amount"])
    return rawboost(w, preset.rawboost, np.random.default_rng(params["seed"]))


def with_algos(cfg: RawBoostConfig, *algos: str) -> RawBoostConfig:
    return replace(cfg, algo_set=tuple(algos))
