# %% [markdown]
# # Waveform transforms
#
# Self-conversion first perturbs the source audio with one of four
# transforms picked uniformly at random.  At intensity 1 the ranges are
# narrow, so the perturbed copy still sounds like the same speaker.

# %%
from collections import Counter

import numpy as np
from scipy.signal import find_peaks, welch

from afss.audio import Waveform
from afss.transforms import (ALL_KINDS, RawBoostConfig, intensity_preset, pitch_shift, rawboost,
                             sample_transform, tanh_distortion, time_stretch)

sr = 16000
t = np.arange(sr) / sr
tone = Waveform(0.5 * np.sin(2 * np.pi * 440 * t), sr)


def peak_hz(w):
    spectrum = np.abs(np.fft.rfft(w.samples * np.hanning(len(w))))
    return np.argmax(spectrum) * w.sample_rate / len(w)


# %% [markdown]
# ## Pitch and tempo
# Pitch shifting keeps the length; time stretching keeps the pitch.

# %%
for st in (-12, -0.5, 0.5, 12):
    out = pitch_shift(tone, st)
    print(f"pitch_shift({st:+}): peak {peak_hz(out):6.1f} Hz, length {len(out)}")
for rate in (0.9, 1.1):
    out = time_stretch(tone, rate)
    print(f"time_stretch({rate}): length {len(out)}, peak {peak_hz(out):.1f} Hz")

# %% [markdown]
# ## Distortion
# The tanh drive adds odd harmonics; the output is rescaled to the input RMS.

# %%
for amount in (0.15, 0.6):
    out = tanh_distortion(tone, amount)
    spec = np.abs(np.fft.rfft(out.samples * np.hanning(len(out))))
    third = 20 * np.log10(spec[3 * 440] / spec[440])
    print(f"tanh amount {amount}: third harmonic at {third:.1f} dBc")

# %% [markdown]
# ## RawBoost
# Convolutive mode carves five notches into the spectrum (one per band).

# %%
noise = Waveform(0.1 * np.random.default_rng(0).standard_normal(2 * sr), sr)
filtered = rawboost(noise, RawBoostConfig(algo_set=("convolutive",)), np.random.default_rng(1))
f, p_in = welch(noise.samples, sr, nperseg=1024)
_, p_out = welch(filtered.samples, sr, nperseg=1024)
h_db = 10 * np.log10(p_out / p_in)
dips, _ = find_peaks(-h_db, prominence=6)
print("notch centres (Hz):", np.round(f[dips]).astype(int).tolist())

# %% [markdown]
# ## Uniform selection

# %%
rng = np.random.default_rng(0)
preset = intensity_preset(1)
counts = Counter(sample_transform(ALL_KINDS, preset, rng)[0].value for _ in range(20000))
print({k: round(v / 20000, 3) for k, v in sorted(counts.items())})
