"""Synthetic speech-like corpora for tests and demos.

A "speaker" is a harmonic profile: a base f0, a spectral tilt and two
resonances.  Utterances are voiced syllables with gliding f0 over a low
noise floor.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import SAMPLE_RATE, Waveform, save_wav
from .manifest import REAL, SampleRecord, write_manifest
from .rng import rng_for


@dataclass(frozen=True)
class SpeakerProfile:
    speaker_id: str
    f0: float
    tilt: float
    formants: tuple[float, float]


def make_speakers(n_speakers: int, seed: int = 0) -> list[SpeakerProfile]:
    rng = rng_for(seed, "speakers", "toy")
    f0s = np.linspace(95.0, 250.0, n_speakers)
    speakers = []
    for i, f0 in enumerate(f0s):
        speakers.append(SpeakerProfile(
            speaker_id=f"spk{i:02d}",
            f0=float(f0 * rng.uniform(0.97, 1.03)),
            tilt=float(rng.uniform(0.8, 1.6)),
            formants=(float(rng.uniform(400, 900)), float(rng.uniform(1200, 2600))),
        ))
    return speakers


def synth_utterance(speaker: SpeakerProfile, rng: np.random.Generator, duration: float = 2.0,
                    sample_rate: int = SAMPLE_RATE, noise_db: float = -35.0) -> Waveform:
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate

    glide = rng.uniform(-0.15, 0.15)
    vibrato = rng.uniform(0.005, 0.02) * np.sin(2 * np.pi * rng.uniform(4, 7) * t)
    f0 = speaker.f0 * (1.0 + glide * (t / duration - 0.5) + vibrato)
    phase = 2 * np.pi * np.cumsum(f0) / sample_rate

    x = np.zeros(n)
    n_harm = int((sample_rate / 2) // (speaker.f0 * 1.25))
    for h in range(1, n_harm + 1):
        fh = h * speaker.f0
        amp = h ** -speaker.tilt
        for fc in speaker.formants:
            amp *= 1.0 + 4.0 * np.exp(-0.5 * ((fh - fc) / 150.0) ** 2)
        x += amp * np.sin(h * phase + rng.uniform(0, 2 * np.pi))

    # syllable envelope: a few voiced segments with short gaps
    env = np.zeros(n)
    bounds = np.sort(rng.uniform(0, n, size=2 * int(rng.integers(3, 6))).astype(int))
    for start, stop in bounds.reshape(-1, 2):
        seg = stop - start
        if seg > 0:
            env[start:stop] = np.hanning(seg) ** 0.5
    env = np.maximum(env, 0.05)

    x = x * env
    x /= np.max(np.abs(x)) + 1e-12
    x += 10 ** (noise_db / 20) * rng.standard_normal(n)
    return Waveform(0.5 * x / np.max(np.abs(x)), sample_rate)


def make_toy_corpus(out_dir, n_utterances: int = 40, n_speakers: int = 8, duration: float = 2.0,
                    seed: int = 0, manifest_name: str = "real.tsv") -> list[SampleRecord]:
    """Write ``n_utterances`` real WAVs (round-robin over speakers) plus a manifest."""
    out_dir = Path(out_dir)
    audio_dir = out_dir / "audio"
    audio_dir.mkdir(parents=True, exist_ok=True)
    speakers = make_speakers(n_speakers, seed)
    records = []
    for i in range(n_utterances):
        spk = speakers[i % n_speakers]
        utt = f"toy{i:04d}"
        w = synth_utterance(spk, rng_for(seed, utt, "toy_utterance"), duration)
        path = audio_dir / f"{utt}.wav"
        save_wav(w, path)
        records.append(SampleRecord(utt, path.resolve(), REAL, spk.speaker_id))
    write_manifest(records, out_dir / manifest_name)
    return records
