"""Reweighting loss, balanced batches, LR schedule and the training loop."""
from __future__ import annotations

import copy
import json
import logging
import math
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np
import torch
from torch import nn

from .audio import load_audio
from .detector import DetectorModel, build_front_end, collate, parameter_groups
from .manifest import SampleRecord
from .metrics import ScoreSet, eer
from .rng import derive_seed, rng_for

log = logging.getLogger(__name__)

EPS = 1e-7
CHECKPOINT_FORMAT = "afss-checkpoint"
CHECKPOINT_VERSION = 1


class NonFiniteLossError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Loss

def _saturation(eps: float) -> float:
    # beyond this |w_tilde| the sigmoid is within one ulp of 0 or 1, so 1 + sigmoid
    # would round onto the interval ends; clamping keeps both bounds strict
    return math.log(1.0 / eps) - 0.5


def loss_weights(w_tilde_fake, w_tilde_real):
    """``(1 + sigmoid(w_tilde_fake), sigmoid(w_tilde_real))``; works on floats and tensors.

    The raw parameters are clamped where the sigmoid saturates in the working
    precision, so ``w_fake`` stays strictly inside (1, 2) and ``w_real``
    strictly inside (0, 1).
    """
    if isinstance(w_tilde_fake, torch.Tensor):
        t = _saturation(torch.finfo(w_tilde_fake.dtype).eps)
        return (1.0 + torch.sigmoid(w_tilde_fake.clamp(-t, t)),
                torch.sigmoid(torch.as_tensor(w_tilde_real).clamp(-t, t)))
    t = _saturation(sys.float_info.epsilon)
    sig = lambda v: 0.5 * (1.0 + math.tanh(0.5 * min(max(v, -t), t)))  # noqa: E731  overflow-free logistic
    return 1.0 + sig(w_tilde_fake), sig(w_tilde_real)


def reweighted_bce(y, p, w_tilde_fake, w_tilde_real):
    """``-[w_fake * y * log p + w_real * (1 - y) * log(1 - p)]`` with p clamped to [eps, 1 - eps].

    Elementwise; reduce as needed.
    """
    w_fake, w_real = loss_weights(w_tilde_fake, w_tilde_real)
    if isinstance(p, torch.Tensor):
        p = p.clamp(EPS, 1.0 - EPS)
        return -(w_fake * y * torch.log(p) + w_real * (1 - y) * torch.log(1 - p))
    p = min(max(p, EPS), 1.0 - EPS)
    return -(w_fake * y * math.log(p) + w_real * (1 - y) * math.log(1 - p))


class ReweightingLoss(nn.Module):
    """Class-weighted BCE whose two weights are learned through sigmoid maps.

    ``w_fake`` lives in (1, 2) and ``w_real`` in (0, 1), so fake samples always
    weigh more than real ones.
    """

    def __init__(self, w_tilde_fake: float = 0.0, w_tilde_real: float = 0.0):
        super().__init__()
        self.w_tilde_fake = nn.Parameter(torch.tensor(float(w_tilde_fake)))
        self.w_tilde_real = nn.Parameter(torch.tensor(float(w_tilde_real)))

    def weights(self) -> tuple[float, float]:
        w_fake, w_real = loss_weights(self.w_tilde_fake.detach(), self.w_tilde_real.detach())
        return float(w_fake), float(w_real)

    def forward(self, p: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
        return reweighted_bce(y.to(p.dtype), p, self.w_tilde_fake.to(p.dtype), self.w_tilde_real.to(p.dtype)).mean()


# ---------------------------------------------------------------------------
# Sampling and schedule

class BalancedBatchSampler:
    """Batches of ``batch_size // 2`` real and ``batch_size // 2`` fake indices.

    Each class pool is shuffled once per epoch and consumed without
    replacement; the epoch ends when the smaller pool runs out and the
    partial remainder is dropped.
    """

    def __init__(self, is_fake: Sequence[bool], batch_size: int):
        if batch_size <= 0 or batch_size % 2:
            raise ValueError(f"batch_size must be positive and even, got {batch_size}")
        is_fake = np.asarray(is_fake, dtype=bool)
        self.fake_idx = np.flatnonzero(is_fake)
        self.real_idx = np.flatnonzero(~is_fake)
        if not len(self.fake_idx) or not len(self.real_idx):
            raise ValueError("balanced sampling needs both real and fake records")
        self.half = batch_size // 2

    def __len__(self) -> int:
        return min(len(self.real_idx), len(self.fake_idx)) // self.half

    def epoch(self, rng: np.random.Generator) -> Iterator[list[int]]:
        real = rng.permutation(self.real_idx)
        fake = rng.permutation(self.fake_idx)
        for b in range(len(self)):
            sl = slice(b * self.half, (b + 1) * self.half)
            yield [int(i) for i in real[sl]] + [int(i) for i in fake[sl]]


def balanced_batches(records: Sequence[SampleRecord], batch_size: int, rng: np.random.Generator):
    """One epoch of balanced index batches over ``records``."""
    return BalancedBatchSampler([r.is_fake for r in records], batch_size).epoch(rng)


def lr_at(step: int, total_steps: int, warmup_steps: int, peak_lr: float, final_lr: float) -> float:
    """Linear warm-up from 0 to ``peak_lr``, then linear decay to ``final_lr`` at ``total_steps``."""
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    if step < warmup_steps:
        return peak_lr * step / warmup_steps
    if total_steps == warmup_steps:
        return peak_lr
    frac = (step - warmup_steps) / (total_steps - warmup_steps)
    # convex form hits both endpoints exactly in floating point
    return (1.0 - frac) * peak_lr + frac * final_lr


# ---------------------------------------------------------------------------
# Training

@dataclass
class TrainConfig:
    lr_front: float = 5e-6
    lr_head: float = 1e-4
    lr_loss: float = 1e-6
    weight_decay: float = 1e-4
    max_epochs: int = 30
    warmup_epochs: int = 5
    final_lr: float = 1e-6
    batch_size: int = 12
    patience: int = 10
    seed: int = 0
    eval_batch_size: int = 32

    def __post_init__(self):
        if self.warmup_epochs >= self.max_epochs:
            raise ValueError("warmup_epochs must be smaller than max_epochs")
        if self.batch_size <= 0 or self.batch_size % 2:
            raise ValueError("batch_size must be positive and even")

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


class EarlyStopping:
    """Tracks the best (lowest) value; ``step`` returns True when training should stop."""

    def __init__(self, patience: int, best: float = math.inf, bad_epochs: int = 0):
        self.patience = patience
        self.best = best
        self.bad_epochs = bad_epochs

    def step(self, value: float) -> bool:
        if value < self.best:
            self.best = value
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
        return self.bad_epochs >= self.patience


class FeatureCache:
    """Memoised front-end input features keyed by audio path."""

    def __init__(self, model: DetectorModel):
        self.model = model
        self._cache: dict[str, torch.Tensor] = {}

    def __call__(self, rec: SampleRecord) -> torch.Tensor:
        key = str(rec.path)
        if key not in self._cache:
            self._cache[key] = self.model.front_end.features(load_audio(rec.path))
        return self._cache[key]


@torch.no_grad()
def score_records(model: DetectorModel, records: Sequence[SampleRecord], features: Callable | None = None,
                  batch_size: int = 32) -> ScoreSet:
    """Eval-mode fake probabilities for ``records``."""
    features = features or FeatureCache(model)
    model.eval()
    scores = []
    for start in range(0, len(records), batch_size):
        chunk = records[start:start + batch_size]
        batch, mask = collate([features(r) for r in chunk])
        scores.append(torch.sigmoid(model(batch, mask)).double().numpy())
    values = np.concatenate(scores) if scores else np.zeros(0)
    return ScoreSet([r.utterance_id for r in records], [r.is_fake for r in records], values)


def build_optimizer(model: DetectorModel, loss: ReweightingLoss, cfg: TrainConfig) -> torch.optim.AdamW:
    groups = parameter_groups(model, loss)
    peaks = {"front_end": cfg.lr_front, "head": cfg.lr_head, "loss": cfg.lr_loss}
    param_groups = []
    for name in ("front_end", "head", "loss"):
        params = [p for p in groups[name] if p.requires_grad]
        if params:
            param_groups.append({"params": params, "name": name, "peak_lr": peaks[name], "lr": 0.0})
    return torch.optim.AdamW(param_groups, weight_decay=cfg.weight_decay)


def save_checkpoint(path, state: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    torch.save(state, tmp)
    tmp.replace(path)


def load_checkpoint(path) -> dict:
    state = torch.load(path, map_location="cpu", weights_only=False)
    if state.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not an {CHECKPOINT_FORMAT} file")
    if state.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {state.get('version')}")
    return state


def _write_history(path: Path, history: list[dict]) -> None:
    # rewritten whole so a resumed run never duplicates or drops an epoch
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        for entry in history:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
    tmp.replace(path)


def _checkpoint_state(model, loss, optimizer, cfg, epoch, step, stopper, history, config_snapshot):
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "front_end": model.front_end.config(),
        "model": model.state_dict(),
        "loss": loss.state_dict(),
        "optimizer": optimizer.state_dict(),
        "epoch": epoch,
        "step": step,
        "best_eer": stopper.best,
        "bad_epochs": stopper.bad_epochs,
        "history": list(history),
        "train_config": asdict(cfg),
        "config": config_snapshot,
    }


def train(model: DetectorModel, train_records: Sequence[SampleRecord], dev_records: Sequence[SampleRecord],
          cfg: TrainConfig, loss: ReweightingLoss | None = None, run_dir=None, resume: bool = False,
          config_snapshot: dict | None = None) -> tuple[dict, list[dict]]:
    """Optimise ``model`` with the reweighting loss on balanced batches.

    Dev EER is computed after every epoch; the best state is kept and
    training stops after ``cfg.patience`` epochs without improvement.  With
    ``run_dir`` the best and last checkpoints and ``history.jsonl`` are
    written there, and ``resume=True`` continues from the last checkpoint.
    Returns ``(best checkpoint state, history)``.
    """
    dev_labels = {r.is_fake for r in dev_records}
    if dev_labels != {True, False}:
        raise ValueError("dev set must contain both real and fake records")
    loss = loss if loss is not None else ReweightingLoss()

    sampler = BalancedBatchSampler([r.is_fake for r in train_records], cfg.batch_size)
    steps_per_epoch = len(sampler)
    if steps_per_epoch == 0:
        raise ValueError("training set too small for one balanced batch")
    total_steps = cfg.max_epochs * steps_per_epoch
    warmup_steps = cfg.warmup_epochs * steps_per_epoch
    optimizer = build_optimizer(model, loss, cfg)
    stopper = EarlyStopping(cfg.patience)
    history: list[dict] = []
    start_epoch, step = 0, 0
    best_state = None

    run_dir = Path(run_dir) if run_dir is not None else None
    last_path = run_dir / "checkpoints" / "last.pt" if run_dir else None
    best_path = run_dir / "checkpoints" / "best.pt" if run_dir else None
    history_path = run_dir / "history.jsonl" if run_dir else None
    if resume and last_path is not None and last_path.exists():
        state = load_checkpoint(last_path)
        model.load_state_dict(state["model"])
        loss.load_state_dict(state["loss"])
        optimizer.load_state_dict(state["optimizer"])
        start_epoch, step = state["epoch"], state["step"]
        stopper = EarlyStopping(cfg.patience, state["best_eer"], state["bad_epochs"])
        history = list(state["history"])
        if best_path.exists():
            best_state = load_checkpoint(best_path)
        log.info("resumed at epoch %d (step %d)", start_epoch, step)
        if stopper.bad_epochs >= cfg.patience:
            return best_state, history

    features = FeatureCache(model)
    labels = torch.tensor([float(r.is_fake) for r in train_records])

    for epoch in range(start_epoch, cfg.max_epochs):
        torch.manual_seed(derive_seed(cfg.seed, f"epoch{epoch}", "dropout"))
        batch_rng = rng_for(cfg.seed, f"epoch{epoch}", "sampler")
        model.train()
        losses = []
        for idx in sampler.epoch(batch_rng):
            step += 1
            for group in optimizer.param_groups:
                group["lr"] = lr_at(step, total_steps, warmup_steps, group["peak_lr"], cfg.final_lr)
            batch, mask = collate([features(train_records[i]) for i in idx])
            p = torch.sigmoid(model(batch, mask))
            value = loss(p, labels[idx])
            if not torch.isfinite(value):
                bad = [train_records[i].utterance_id for i in idx]
                raise NonFiniteLossError(f"epoch {epoch + 1} step {step}: loss {value.item()} on batch {bad}")
            optimizer.zero_grad()
            value.backward()
            optimizer.step()
            losses.append(value.item())

        dev_eer, _ = eer(score_records(model, dev_records, features, cfg.eval_batch_size))
        w_fake, w_real = loss.weights()
        improved = dev_eer < stopper.best
        stop = stopper.step(dev_eer)
        entry = {"epoch": epoch + 1, "train_loss": float(np.mean(losses)), "dev_eer": dev_eer,
                 "w_fake": w_fake, "w_real": w_real, "step": step}
        history.append(entry)
        log.info("epoch %d: loss %.4f dev EER %.4f w_fake %.4f w_real %.4f",
                 epoch + 1, entry["train_loss"], dev_eer, w_fake, w_real)

        state = _checkpoint_state(model, loss, optimizer, cfg, epoch + 1, step, stopper, history,
                                  config_snapshot)
        if improved:
            best_state = copy.deepcopy(state)
            if best_path is not None:
                save_checkpoint(best_path, state)
        if history_path is not None:
            _write_history(history_path, history)
        if last_path is not None:
            save_checkpoint(last_path, state)
        if stop:
            log.info("early stop after %d epochs without improvement", stopper.bad_epochs)
            break
    return best_state, history


def build_model(front_end_config: dict, seed: int = 0) -> DetectorModel:
    """Fresh detector with seeded initialisation."""
    torch.manual_seed(derive_seed(seed, "init", "torch"))
    return DetectorModel(build_front_end(front_end_config))


def model_from_checkpoint(state: dict) -> DetectorModel:
    model = DetectorModel(build_front_end(state["front_end"]))
    model.load_state_dict(state["model"])
    model.eval()
    return model
