# %% [markdown]
# # Audio core: STFT, mel encoding and Griffin-Lim
#
# The reference "vocoder" used throughout the pipeline is a mel encoder
# followed by 32 Griffin-Lim iterations.  It keeps the pitch of a signal
# but not its fine phase structure, which is exactly the kind of artifact a
# detector can learn from.

# %%
import numpy as np

from afss.audio import Waveform, griffin_lim_decode, istft, mel_encode, stft

sr = 16000
t = np.arange(sr) / sr
tone = Waveform(0.5 * np.sin(2 * np.pi * 440 * t), sr)

# %% [markdown]
# The STFT is invertible: a Hann window with hop 256 satisfies the
# overlap-add condition, so analysis followed by synthesis returns the input.

# %%
frames = stft(tone)
back = istft(frames, length=len(tone))
print("STFT frames:", frames.shape)
print("round-trip max error: %.2e" % np.max(np.abs(back - tone.samples)))

# %% [markdown]
# The mel spectrogram throws the phase away and smooths the spectrum into
# 80 bands.  Decoding it again gives a waveform whose peak stays close to
# 440 Hz while the samples themselves differ.

# %%
mel = mel_encode(tone)
decoded = griffin_lim_decode(mel)
spectrum = np.abs(np.fft.rfft(decoded.samples * np.hanning(len(decoded))))
peak = np.argmax(spectrum) * sr / len(decoded)
n = len(decoded)
err = np.sqrt(np.mean((decoded.samples - tone.samples[:n]) ** 2)) / tone.rms()
print("mel frames:", mel.frames.shape)
print("decoded peak: %.1f Hz" % peak)
print("relative RMS difference after decode: %.2f" % err)
