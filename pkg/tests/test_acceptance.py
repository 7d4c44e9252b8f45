"""Acceptance checks, one block per criterion; the terminal summary prints a PASS/FAIL line for each."""
import dataclasses
import json
import math
import time

import numpy as np
import pytest
import torch

from afss import config as config_mod
from afss.audio import SAMPLE_RATE, Waveform
from afss.cli import cmd_evaluate, cmd_synthesize, cmd_train
from afss.config import BackendSpec, ExperimentConfig
from afss.manifest import SampleRecord, read_manifest, write_manifest
from afss.metrics import ScoreSet, accuracy, auc, average_precision, eer
from afss.synthesis import generate_corpus
from afss.toy import make_toy_corpus
from afss.training import (BalancedBatchSampler, TrainConfig, build_model, loss_weights, lr_at, reweighted_bce,
                           train)
from afss.transforms import RawBoostConfig, pitch_shift, rawboost, time_stretch
from conftest import SMALL_FRONT_END, make_tone
from oracles import ap_prefix, auc_pairwise, central_difference, count_spectral_dips, eer_sweep, fft_peak_hz

criterion = pytest.mark.criterion


# ---------------------------------------------------------------------------
# 1. Loss correctness

@criterion(1, "loss closed forms and finite-difference gradients")
def test_loss_closed_forms():
    assert abs(reweighted_bce(1, 0.5, 0.0, 0.0) - 1.5 * math.log(2)) <= 1e-9
    assert abs(reweighted_bce(0, 0.5, 0.0, 0.0) - 0.5 * math.log(2)) <= 1e-9
    t = lambda v: torch.tensor(v, dtype=torch.float64)  # noqa: E731
    assert abs(reweighted_bce(t(1.0), t(0.5), t(0.0), t(0.0)).item() - 1.5 * math.log(2)) <= 1e-9
    assert abs(reweighted_bce(t(0.0), t(0.5), t(0.0), t(0.0)).item() - 0.5 * math.log(2)) <= 1e-9


@criterion(1, "loss closed forms and finite-difference gradients")
def test_loss_gradients():
    rng = np.random.default_rng(0)
    for _ in range(100):
        y = float(rng.integers(2))
        p, a, b = rng.uniform(0.02, 0.98), rng.uniform(-5, 5), rng.uniform(-5, 5)
        args = [torch.tensor(v, dtype=torch.float64, requires_grad=True) for v in (p, a, b)]
        reweighted_bce(torch.tensor(y, dtype=torch.float64), *args).backward()
        numeric = [
            central_difference(lambda v: reweighted_bce(y, v, a, b), p, h=1e-5),
            central_difference(lambda v: reweighted_bce(y, p, v, b), a, h=1e-5),
            central_difference(lambda v: reweighted_bce(y, p, a, v), b, h=1e-5),
        ]
        for arg, num in zip(args, numeric):
            assert abs(arg.grad.item() - num) <= 1e-4 * abs(num) + 1e-12


# ---------------------------------------------------------------------------
# 2. Weight bounds

@criterion(2, "reweighting bounds w_fake in (1,2), w_real in (0,1)")
def test_weight_bounds_fuzz():
    rng = np.random.default_rng(1)
    raw = np.concatenate([rng.uniform(-100, 100, size=(20_000, 2)),
                          [[-100.0, 100.0], [100.0, -100.0], [-100.0, -100.0], [100.0, 100.0], [0.0, 0.0]]])
    for a, b in raw:
        w_fake, w_real = loss_weights(float(a), float(b))
        assert 1.0 < w_fake < 2.0 and 0.0 < w_real < 1.0 and w_fake > w_real
    for dtype in (torch.float32, torch.float64):
        a = torch.tensor(raw[:, 0], dtype=dtype)
        b = torch.tensor(raw[:, 1], dtype=dtype)
        w_fake, w_real = loss_weights(a, b)
        assert torch.all((w_fake > 1) & (w_fake < 2) & (w_real > 0) & (w_real < 1) & (w_fake > w_real))


# ---------------------------------------------------------------------------
# 3. Metric oracles

@criterion(3, "EER/AUC/AP/ACC match brute-force oracles on 1000 score sets")
def test_metric_oracles():
    rng = np.random.default_rng(2)
    for i in range(1000):
        n = int(rng.integers(2, 51))
        n_fake = int(rng.integers(1, n))
        labels = np.array([False] * (n - n_fake) + [True] * n_fake)
        rng.shuffle(labels)
        # every other set is coarsely quantised so ties and exact crossings occur
        scores = rng.integers(0, 6, n) / 5.0 if i % 2 else rng.normal(size=n)
        s = ScoreSet.from_arrays(labels, scores)
        real, fake = list(scores[~labels]), list(scores[labels])
        assert abs(eer(s)[0] - eer_sweep(real, fake)) <= 1e-9
        assert abs(auc(s) - auc_pairwise(real, fake)) <= 1e-9
        assert abs(average_precision(s) - ap_prefix(list(scores), list(labels))) <= 1e-9
        direct = sum((sc >= 0.5) == lab for sc, lab in zip(scores, labels)) / n
        assert abs(accuracy(s) - direct) <= 1e-9


# ---------------------------------------------------------------------------
# 4. Sampler

@criterion(4, "balanced sampler: half/half batches, floor batch count")
def test_sampler_exactness():
    rng = np.random.default_rng(3)
    for _ in range(20):
        n_real, n_fake = int(rng.integers(1, 300)), int(rng.integers(1, 300))
        batch_size = 2 * int(rng.integers(1, 16))
        is_fake = np.array([False] * n_real + [True] * n_fake)
        rng.shuffle(is_fake)
        sampler = BalancedBatchSampler(is_fake, batch_size)
        batches = list(sampler.epoch(rng))
        assert len(batches) == len(sampler) == min(n_real, n_fake) // (batch_size // 2)
        for batch in batches:
            assert len(batch) == batch_size
            assert int(is_fake[batch].sum()) == batch_size // 2
        flat = [i for b in batches for i in b]
        assert len(flat) == len(set(flat))


# ---------------------------------------------------------------------------
# 5. Same-speaker constraint

@criterion(5, "same-speaker constraint and RawBoost-only self_rec logs")
def test_same_speaker_constraint(tmp_path):
    reals = make_toy_corpus(tmp_path / "real", n_utterances=40, n_speakers=8, duration=1.0, seed=0)
    assert len({r.speaker_id for r in reals}) == 8
    corpus = generate_corpus(reals, tmp_path / "fake", mode="afss", seed=0)
    fakes = corpus.records
    assert len(fakes) == 40 and not corpus.skipped
    speaker_of = {r.utterance_id: r.speaker_id for r in reals}
    provenances = {r.provenance for r in fakes}
    assert provenances == {"self_vc", "self_rec"}
    for rec in fakes:
        source = rec.transform_log[0]["source"]
        assert rec.speaker_id == speaker_of[source]
        if rec.provenance == "self_vc":
            assert rec.transform_log[0]["target_speaker"] == speaker_of[source]
        else:
            assert [e["kind"] for e in rec.transform_log] == ["RawBoost"]


# ---------------------------------------------------------------------------
# 6. Transform physics

@criterion(6, "transform physics: pitch, stretch, SNR, notch count")
def test_pitch_shift_octave():
    tone = make_tone(440.0, 1.0)
    out = pitch_shift(tone, 12.0)
    assert abs(fft_peak_hz(out.samples, SAMPLE_RATE) - 880.0) <= SAMPLE_RATE / len(out)


@criterion(6, "transform physics: pitch, stretch, SNR, notch count")
def test_time_stretch_length():
    out = time_stretch(Waveform(np.random.default_rng(4).standard_normal(16000) * 0.1), 0.9)
    assert abs(len(out) - 16000 / 0.9) <= 1


@criterion(6, "transform physics: pitch, stretch, SNR, notch count")
def test_additive_snr():
    rng = np.random.default_rng(5)
    tone = make_tone(440.0, 1.0)
    for seed in range(20):
        snr = float(rng.uniform(10.0, 40.0))
        cfg = RawBoostConfig(snr_min=snr, snr_max=snr, algo_set=("additive",))
        out = rawboost(tone, cfg, np.random.default_rng(seed))
        noise = out.samples - tone.samples
        measured = 10 * np.log10(np.sum(tone.samples ** 2) / np.sum(noise ** 2))
        assert abs(measured - snr) <= 0.5


@criterion(6, "transform physics: pitch, stretch, SNR, notch count")
def test_convolutive_dips():
    noise = Waveform(0.1 * np.random.default_rng(6).standard_normal(2 * SAMPLE_RATE))
    cfg = RawBoostConfig(algo_set=("convolutive",))
    assert cfg.n_bands == 5
    for seed in range(50):
        out = rawboost(noise, cfg, np.random.default_rng(seed))
        assert count_spectral_dips(noise.samples, out.samples, SAMPLE_RATE) == 5


# ---------------------------------------------------------------------------
# 7. End-to-end separability

AC7_SEED = 0
AC7_TRAINING = dict(lr_front=1e-4, lr_head=1e-3, warmup_epochs=1, max_epochs=10)


def _split(records, n_sources):
    """60/15/25 split by source utterance index, so every fake follows its source."""
    order = {f"toy{i:04d}": i for i in range(n_sources)}

    def source(rec):
        return rec.utterance_id.split("-")[0]

    parts = {"train": [], "dev": [], "eval": []}
    for rec in records:
        i = order[source(rec)]
        key = "train" if i < 0.60 * n_sources else "dev" if i < 0.75 * n_sources else "eval"
        parts[key].append(rec)
    return parts


def _shuffled_labels(records, rng):
    flags = rng.permutation([r.is_fake for r in records])
    return [SampleRecord(r.utterance_id, r.path, "fake" if f else "real", r.speaker_id,
                         "self_vc" if f else "real") for r, f in zip(records, flags)]


@pytest.fixture(scope="module")
def ac7_workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("ac7")
    make_toy_corpus(root / "real", n_utterances=200, n_speakers=8, duration=2.0, seed=AC7_SEED)
    config = ExperimentConfig(seed=AC7_SEED)
    config.synthesis.vc = BackendSpec("knn", "knn_vc")
    config.synthesis.vocoders = [BackendSpec("griffin_lim", "griffin_lim")]
    config.transforms.level = 1
    config.training = dataclasses.replace(config.training, **AC7_TRAINING)
    config.validate()
    start = time.monotonic()
    paths = cmd_synthesize(config, root / "real" / "real.tsv", root / "run")
    parts = _split(read_manifest(paths["train"]), 200)
    for name, recs in parts.items():
        write_manifest(recs, root / "splits" / f"{name}.tsv")
    return root, config, time.monotonic() - start


@pytest.mark.slow
@criterion(7, "end-to-end: held-out EER <= 10% and beats label-shuffled control")
def test_end_to_end_separability(ac7_workspace):
    root, config, elapsed = ac7_workspace
    splits = root / "splits"
    start = time.monotonic()
    best, history = cmd_train(config, splits / "train.tsv", splits / "dev.tsv", root / "run")
    assert len(history) <= 10
    result = cmd_evaluate(root / "run" / "checkpoints" / "best.pt", [splits / "eval.tsv"], root / "eval")
    eval_eer = result["datasets"]["eval"]["eer"]

    rng = np.random.default_rng(AC7_SEED)
    for name in ("train", "dev"):
        write_manifest(_shuffled_labels(read_manifest(splits / f"{name}.tsv"), rng),
                       root / "control" / f"{name}.tsv")
    cmd_train(config, root / "control" / "train.tsv", root / "control" / "dev.tsv", root / "control_run")
    control = cmd_evaluate(root / "control_run" / "checkpoints" / "best.pt", [splits / "eval.tsv"],
                           root / "control_eval")
    control_eer = control["datasets"]["eval"]["eer"]
    elapsed += time.monotonic() - start
    print(f"\nAC7 eval EER {eval_eer:.4f}  control EER {control_eer:.4f}  "
          f"epochs {len(history)}  wall {elapsed:.0f}s")

    assert history[0]["dev_eer"] < 0.5
    assert eval_eer <= 0.10
    assert abs(control_eer - 0.5) <= 0.10
    assert eval_eer < control_eer
    assert elapsed <= 15 * 60


# ---------------------------------------------------------------------------
# 8. Schedule and early stopping

@criterion(8, "LR schedule apex/end and early stopping after exactly `patience` epochs")
def test_schedule_endpoints():
    cfg = TrainConfig()
    for steps_per_epoch in (1, 7, 16, 833):
        total, warmup = cfg.max_epochs * steps_per_epoch, cfg.warmup_epochs * steps_per_epoch
        for peak in (cfg.lr_front, cfg.lr_head, cfg.lr_loss):
            assert lr_at(warmup, total, warmup, peak, cfg.final_lr) == peak
            assert lr_at(total, total, warmup, peak, cfg.final_lr) == 1e-6
            assert lr_at(0, total, warmup, peak, cfg.final_lr) == 0.0


@criterion(8, "LR schedule apex/end and early stopping after exactly `patience` epochs")
def test_early_stopping_on_constant_dev(small_corpus):
    reals, fakes = small_corpus
    # the same audio listed under both labels: every model scores them equally, EER is stuck at 0.5
    rigged = [reals[0], SampleRecord("twin", reals[0].path, "fake", reals[0].speaker_id, "self_vc"),
              reals[1], SampleRecord("twin2", reals[1].path, "fake", reals[1].speaker_id, "self_vc")]
    patience = 3
    cfg = TrainConfig(lr_front=1e-4, lr_head=1e-3, max_epochs=20, warmup_epochs=1, batch_size=4,
                      patience=patience, seed=0)
    _, history = train(build_model(SMALL_FRONT_END, 0), reals + fakes, rigged, cfg)
    assert {h["dev_eer"] for h in history} == {0.5}
    assert len(history) == 1 + patience


# ---------------------------------------------------------------------------
# 9. Determinism

def _small_config(seed=0):
    config = ExperimentConfig(seed=seed)
    config.detector.n_mels, config.detector.hidden = 16, 8
    config.training = dataclasses.replace(config.training, lr_front=1e-4, lr_head=1e-3, max_epochs=3,
                                          warmup_epochs=1, batch_size=4)
    return config.validate()


@criterion(9, "synthesis and training reruns are byte-identical")
def test_determinism(tmp_path):
    make_toy_corpus(tmp_path / "real", n_utterances=20, n_speakers=4, duration=0.8, seed=9)
    config = _small_config(seed=9)
    runs = []
    for name in ("a", "b"):
        run_dir = tmp_path / "runs" / name
        paths = cmd_synthesize(config, tmp_path / "real" / "real.tsv", run_dir)
        cmd_train(config, paths["train"], paths["train"], run_dir)
        runs.append(run_dir)
    a, b = runs
    for rel in ("manifests/fake.tsv", "manifests/train.tsv", "history.jsonl", "config.snapshot"):
        assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel
    wavs = sorted(p.name for p in (a / "audio").glob("*.wav"))
    assert len(wavs) == 20
    for name in wavs:
        assert (a / "audio" / name).read_bytes() == (b / "audio" / name).read_bytes()
    history = [json.loads(line) for line in (a / "history.jsonl").read_text().splitlines()]
    assert len(history) == 3


# ---------------------------------------------------------------------------
# 10. Cross-speaker ablation plumbing

@criterion(10, "cross_vc mode: different-speaker pairs, no self_* provenance")
def test_cross_vc_mode(tmp_path):
    make_toy_corpus(tmp_path / "real", n_utterances=40, n_speakers=8, duration=1.0, seed=10)
    config = ExperimentConfig(seed=10)
    config.synthesis.mode = "cross_vc"
    config.validate()
    assert config_mod.loads(config_mod.dumps(config)).synthesis.mode == "cross_vc"
    paths = cmd_synthesize(config, tmp_path / "real" / "real.tsv", tmp_path / "run")
    fakes = read_manifest(paths["fake"])
    reals = {r.utterance_id: r for r in read_manifest(tmp_path / "real" / "real.tsv")}
    assert len(fakes) == 40
    assert {r.provenance for r in fakes} == {"cross_vc"}
    for rec in fakes:
        entry = rec.transform_log[0]
        source, target = reals[entry["source"]], reals[entry["target"]]
        assert source.speaker_id != target.speaker_id
        assert entry["speaker"] == source.speaker_id and entry["target_speaker"] == target.speaker_id
