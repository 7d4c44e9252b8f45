"""Pseudo-fake generation: self-conversion, self-reconstruction and the
cross-speaker baseline, plus the corpus generator built on them.
"""
from __future__ import annotations

import logging
import shlex
import subprocess
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Protocol, Sequence, runtime_checkable

import numpy as np

from .audio import (GRIFFIN_LIM_ITERS, HOP_LENGTH, N_FFT, N_MELS, SAMPLE_RATE, MelSpectrogram, Waveform,
                    griffin_lim_decode, load_audio, mel_encode, resample, save_wav)
from .manifest import FAKE, SampleRecord
from .rng import rng_for
from .transforms import (ALL_KINDS, IntensityPreset, RawBoostConfig, TransformKind, apply_transform,
                         intensity_preset, rawboost, sample_transform)

log = logging.getLogger(__name__)

SILENCE_RMS = 1e-5
MAX_FAILURE_RATE = 0.01


class SilentInputError(ValueError):
    """Base audio is (near) silent and cannot drive a conversion."""


class BackendError(RuntimeError):
    """A VC or vocoder backend failed on a given utterance."""


class CorpusGenerationError(RuntimeError):
    """Too many per-sample failures during corpus generation."""


@runtime_checkable
class VCBackend(Protocol):
    name: str

    def convert(self, source: Waveform, target_reference: Waveform) -> Waveform: ...


@runtime_checkable
class VocoderBackend(Protocol):
    name: str

    def reconstruct(self, w: Waveform) -> Waveform: ...


# ---------------------------------------------------------------------------
# Reference backends

def reference_knn_vc(source: Waveform, target_reference: Waveform, k: int = 4, n_mels: int = N_MELS,
                     n_fft: int = N_FFT, hop_length: int = HOP_LENGTH,
                     n_iters: int = GRIFFIN_LIM_ITERS) -> Waveform:
    """kNN frame matching in the mel domain, resynthesised with Griffin-Lim.

    Each source frame is replaced by the mean mel frame of its ``k`` nearest
    target frames under cosine distance between log-mel vectors.
    """
    for name, w in (("source", source), ("target", target_reference)):
        if w.duration < 0.5:
            raise ValueError(f"{name} must be at least 0.5 s, got {w.duration:.3f} s")
    src = mel_encode(source, n_mels, n_fft, hop_length)
    tgt = mel_encode(resample(target_reference, source.sample_rate), n_mels, n_fft, hop_length)
    if k < 1 or k > tgt.n_frames:
        raise ValueError(f"k={k} must be in [1, {tgt.n_frames}] (target frames)")

    def _unit(frames):
        feats = np.log(frames + 1e-5)
        return feats / np.linalg.norm(feats, axis=1, keepdims=True)

    sim = _unit(src.frames) @ _unit(tgt.frames).T
    # stable sort keeps tie-breaking deterministic
    nearest = np.argsort(-sim, axis=1, kind="stable")[:, :k]
    matched = tgt.frames[nearest].mean(axis=1)
    mel = MelSpectrogram(matched, src.sample_rate, n_fft, hop_length, n_fft)
    return griffin_lim_decode(mel, n_iters, length=len(source))


@dataclass
class KnnVC:
    k: int = 4
    n_iters: int = GRIFFIN_LIM_ITERS
    name: str = "knn_vc"

    def convert(self, source: Waveform, target_reference: Waveform) -> Waveform:
        return reference_knn_vc(source, target_reference, self.k, n_iters=self.n_iters)


@dataclass
class GriffinLimVocoder:
    """Mel encode followed by Griffin-Lim decode."""

    n_mels: int = N_MELS
    n_fft: int = N_FFT
    hop_length: int = HOP_LENGTH
    n_iters: int = GRIFFIN_LIM_ITERS
    name: str = "griffin_lim"

    def reconstruct(self, w: Waveform) -> Waveform:
        mel = mel_encode(w, self.n_mels, self.n_fft, self.hop_length)
        return griffin_lim_decode(mel, self.n_iters)


@dataclass
class IdentityVC:
    name: str = "identity_vc"

    def convert(self, source: Waveform, target_reference: Waveform) -> Waveform:
        return Waveform(source.samples.copy(), source.sample_rate)


# ---------------------------------------------------------------------------
# External backends

def _run(command: Sequence[str], mapping: dict[str, str], name: str) -> None:
    argv = [part.format(**mapping) for part in command]
    proc = subprocess.run(argv, capture_output=True, text=True)
    if proc.returncode != 0:
        raise BackendError(f"{name}: `{shlex.join(argv)}` exited {proc.returncode}: {proc.stderr.strip()}")


@dataclass
class SubprocessVC:
    """VC backend wrapping an external command.

    ``command`` is an argv list with ``{source}``, ``{target}`` and
    ``{output}`` placeholders; the command must write the output WAV and
    exit 0.
    """

    command: list[str]
    name: str = "subprocess_vc"
    sample_rate: int = SAMPLE_RATE

    def convert(self, source: Waveform, target_reference: Waveform) -> Waveform:
        with tempfile.TemporaryDirectory() as tmp:
            paths = {k: str(Path(tmp) / f"{k}.wav") for k in ("source", "target", "output")}
            save_wav(source, paths["source"])
            save_wav(target_reference, paths["target"])
            _run(self.command, paths, self.name)
            return load_audio(paths["output"], self.sample_rate)


@dataclass
class SubprocessVocoder:
    """Vocoder backend wrapping an external command with ``{input}``/``{output}`` placeholders."""

    command: list[str]
    name: str = "subprocess_vocoder"
    sample_rate: int = SAMPLE_RATE

    def reconstruct(self, w: Waveform) -> Waveform:
        with tempfile.TemporaryDirectory() as tmp:
            paths = {k: str(Path(tmp) / f"{k}.wav") for k in ("input", "output")}
            save_wav(w, paths["input"])
            _run(self.command, paths, self.name)
            return load_audio(paths["output"], self.sample_rate)


# ---------------------------------------------------------------------------
# Branches

def self_convert(x_b: Waveform, speaker_id: str, preset: IntensityPreset, vc: VCBackend,
                 rng: np.random.Generator, kind_pool=ALL_KINDS,
                 utterance_id: str = "?") -> tuple[Waveform, list[dict]]:
    """Transform the base audio, then convert it towards its own transformed copy."""
    if x_b.rms() <= SILENCE_RMS:
        raise SilentInputError(f"{utterance_id}: input is silent (rms {x_b.rms():.2e})")
    kind, params = sample_transform(kind_pool, preset, rng)
    x_t = apply_transform(x_b, kind, params, preset)
    try:
        out = vc.convert(x_b, x_t)
    except Exception as exc:
        raise BackendError(f"{utterance_id}: VC backend {vc.name} failed: {exc}") from exc
    entry = {"stage": "pre_vc", "kind": kind.value, "params": params, "backend": vc.name,
             "source": utterance_id, "speaker": speaker_id, "target_speaker": speaker_id}
    return out, [entry]


def self_reconstruct(x_b: Waveform, speaker_id: str, cfg: RawBoostConfig, voc: VocoderBackend,
                     rng: np.random.Generator, utterance_id: str = "?") -> tuple[Waveform, list[dict]]:
    """Vocoder round trip followed by RawBoost (the only transform in this branch)."""
    try:
        rec = voc.reconstruct(x_b)
    except Exception as exc:
        raise BackendError(f"{utterance_id}: vocoder {voc.name} failed: {exc}") from exc
    seed = int(rng.integers(0, 2**63 - 1))
    out = rawboost(rec, cfg, np.random.default_rng(seed))
    entry = {"stage": "post_rec", "kind": TransformKind.RAWBOOST.value, "params": {"seed": seed},
             "backend": voc.name, "source": utterance_id, "speaker": speaker_id}
    return out, [entry]


def cross_convert(x_b: Waveform, speaker_id: str, target: SampleRecord, target_audio: Waveform,
                  vc: VCBackend, utterance_id: str = "?") -> tuple[Waveform, list[dict]]:
    """Conventional VC towards a different speaker (ablation baseline)."""
    if target.speaker_id == speaker_id:
        raise ValueError(f"{utterance_id}: cross conversion needs a different speaker, "
                         f"both are {speaker_id!r}")
    try:
        out = vc.convert(x_b, target_audio)
    except Exception as exc:
        raise BackendError(f"{utterance_id}: VC backend {vc.name} failed: {exc}") from exc
    entry = {"stage": "cross_vc", "kind": None, "params": {}, "backend": vc.name, "source": utterance_id,
             "speaker": speaker_id, "target": target.utterance_id, "target_speaker": target.speaker_id}
    return out, [entry]


# ---------------------------------------------------------------------------
# Corpus generation

class GeneratedCorpus(NamedTuple):
    records: list[SampleRecord]
    skipped: list[tuple[str, str]]


@dataclass
class _Job:
    record: SampleRecord
    out_path: Path
    mode: str
    branch_ratio: float
    vc: VCBackend
    vocoders: tuple
    preset: IntensityPreset
    kind_pool: tuple
    seed: int
    target: SampleRecord | None = None


def _synthesize_one(job: _Job) -> SampleRecord:
    rec, seed = job.record, job.seed
    x_b = load_audio(rec.path)
    if job.mode == "cross_vc":
        target_audio = load_audio(job.target.path)
        out, tlog = cross_convert(x_b, rec.speaker_id, job.target, target_audio, job.vc, rec.utterance_id)
        provenance, speaker = "cross_vc", job.target.speaker_id
    elif rng_for(seed, rec.utterance_id, "branch").random() < job.branch_ratio:
        out, tlog = self_convert(x_b, rec.speaker_id, job.preset, job.vc,
                                 rng_for(seed, rec.utterance_id, "pre_vc"), job.kind_pool, rec.utterance_id)
        provenance, speaker = "self_vc", rec.speaker_id
    else:
        voc = job.vocoders[int(rng_for(seed, rec.utterance_id, "vocoder").integers(len(job.vocoders)))]
        out, tlog = self_reconstruct(x_b, rec.speaker_id, job.preset.rawboost, voc,
                                     rng_for(seed, rec.utterance_id, "post_rec"), rec.utterance_id)
        provenance, speaker = "self_rec", rec.speaker_id
    out_path = job.out_path.with_name(f"{rec.utterance_id}-{provenance}.wav")
    save_wav(out, out_path)
    return SampleRecord(f"{rec.utterance_id}-{provenance}", out_path.resolve(), FAKE, speaker, provenance, tlog)


def _try(job: _Job):
    try:
        return _synthesize_one(job)
    except Exception as exc:  # reported and counted by the caller
        return exc


def generate_corpus(real_records: Sequence[SampleRecord], out_dir, mode: str = "afss",
                    branch_ratio: float = 0.5, vc: VCBackend | None = None,
                    vocoders: Sequence[VocoderBackend] | None = None,
                    preset: IntensityPreset | None = None, seed: int = 0,
                    kind_pool=ALL_KINDS, workers: int = 1) -> GeneratedCorpus:
    """Emit one pseudo-fake per real record.

    ``mode="afss"`` routes each record to self-conversion with probability
    ``branch_ratio`` and to self-reconstruction otherwise; ``mode="cross_vc"``
    converts towards a random utterance of another speaker.  Audio goes to
    ``out_dir``; the returned records point at it.
    """
    if mode not in ("afss", "cross_vc"):
        raise ValueError(f"unknown mode {mode!r}")
    if not real_records:
        raise ValueError("real manifest is empty")
    bad = [r.utterance_id for r in real_records if r.is_fake]
    if bad:
        raise ValueError(f"generate_corpus needs real records only; spoof: {bad[:5]}")
    if not 0.0 <= branch_ratio <= 1.0:
        raise ValueError("branch_ratio must be in [0, 1]")
    vc = vc or KnnVC()
    vocoders = tuple(vocoders or (GriffinLimVocoder(),))
    preset = preset or intensity_preset(1)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    by_id = sorted(real_records, key=lambda r: r.utterance_id)
    jobs = []
    for rec in real_records:
        target = None
        if mode == "cross_vc":
            others = [r for r in by_id if r.speaker_id != rec.speaker_id]
            if not others:
                raise ValueError(f"{rec.utterance_id}: no other speaker available for cross conversion")
            target = others[int(rng_for(seed, rec.utterance_id, "cross_target").integers(len(others)))]
        jobs.append(_Job(rec, out_dir / f"{rec.utterance_id}.wav", mode, branch_ratio, vc, vocoders,
                         preset, tuple(kind_pool), seed, target))

    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_try, jobs))
    else:
        results = [_try(job) for job in jobs]

    fakes, skipped = [], []
    for job, res in zip(jobs, results):
        if isinstance(res, Exception):
            log.warning("skipping %s: %s", job.record.utterance_id, res)
            skipped.append((job.record.utterance_id, str(res)))
        else:
            fakes.append(res)
    if len(skipped) > MAX_FAILURE_RATE * len(jobs):
        raise CorpusGenerationError(
            f"{len(skipped)} of {len(jobs)} samples failed (limit {MAX_FAILURE_RATE:.0%}); "
            f"first: {skipped[0][0]}: {skipped[0][1]}")
    return GeneratedCorpus(fakes, skipped)
