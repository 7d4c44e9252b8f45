"""Binary real/fake detector: front-end, 1024->128 projection and pooling head."""
from __future__ import annotations

from typing import Protocol, runtime_checkable

import numpy as np
import torch
from torch import nn

from .audio import SAMPLE_RATE, Waveform, mel_filterbank, stft

MIN_DURATION = 0.1
D_FRONT = 1024
D_PROJ = 128


class InputTooShortError(ValueError):
    pass


@runtime_checkable
class FrontEnd(Protocol):
    d_front: int
    trainable: bool

    def features(self, w: Waveform) -> torch.Tensor:
        """Fixed (non-trainable) per-frame input features, ``[n_frames, d_in]``."""

    def forward(self, feats: torch.Tensor) -> torch.Tensor:
        """``[batch, n_frames, d_in]`` -> ``[batch, n_frames, d_front]``."""

    def extract(self, w: Waveform) -> torch.Tensor: ...


class ToyFrontEnd(nn.Module):
    """Log-mel frames through two 1-D convolutions, widened to 1024 channels.

    Analysis uses a shorter window than the reference vocoder (512/160) so
    that vocoder frame-rate artifacts are not hidden by matching grids.
    """

    def __init__(self, n_mels: int = 80, hidden: int = 64, d_front: int = D_FRONT, n_fft: int = 512,
                 hop_length: int = 160, sample_rate: int = SAMPLE_RATE, trainable: bool = True):
        super().__init__()
        self.n_mels, self.n_fft, self.hop_length, self.sample_rate = n_mels, n_fft, hop_length, sample_rate
        self.d_front = d_front
        self.conv1 = nn.Conv1d(n_mels, hidden, kernel_size=5, padding=2)
        self.conv2 = nn.Conv1d(hidden, d_front, kernel_size=3, padding=1)
        self.act = nn.GELU()
        self.register_buffer("fbank", torch.tensor(mel_filterbank(sample_rate, n_fft, n_mels), dtype=torch.float32),
                             persistent=False)
        self.trainable = trainable

    @property
    def trainable(self) -> bool:
        return self._trainable

    @trainable.setter
    def trainable(self, flag: bool):
        self._trainable = bool(flag)
        for p in self.parameters():
            p.requires_grad_(self._trainable)

    def config(self) -> dict:
        return {"kind": "toy", "n_mels": self.n_mels, "hidden": self.conv1.out_channels,
                "d_front": self.d_front, "n_fft": self.n_fft, "hop_length": self.hop_length,
                "sample_rate": self.sample_rate}

    def features(self, w: Waveform) -> torch.Tensor:
        mag = np.abs(stft(w, self.n_fft, self.hop_length))
        mel = torch.from_numpy(mag).float() @ self.fbank.T
        return torch.log(mel + 1e-5)

    def forward(self, feats: torch.Tensor) -> torch.Tensor:
        h = self.act(self.conv1(feats.transpose(1, 2)))
        return self.act(self.conv2(h)).transpose(1, 2)

    def extract(self, w: Waveform) -> torch.Tensor:
        return self.forward(self.features(w).unsqueeze(0))[0]


class IdentityFrontEnd(nn.Module):
    """Passes precomputed features through; used for small gradient checks."""

    def __init__(self, d_front: int):
        super().__init__()
        self.d_front = d_front
        self.trainable = False

    def config(self) -> dict:
        return {"kind": "identity", "d_front": self.d_front}

    def features(self, w: Waveform) -> torch.Tensor:
        raise NotImplementedError("IdentityFrontEnd takes feature tensors directly")

    def forward(self, feats: torch.Tensor) -> torch.Tensor:
        return feats


def build_front_end(config: dict) -> nn.Module:
    config = dict(config)
    kind = config.pop("kind", "toy")
    if kind == "toy":
        return ToyFrontEnd(**config)
    if kind == "identity":
        return IdentityFrontEnd(**config)
    raise ValueError(f"unknown front-end kind {kind!r}")


class DetectorModel(nn.Module):
    """front-end -> Linear(1024, 128) -> ReLU -> Dropout(0.5) -> masked mean pool -> Linear(128, 1)."""

    def __init__(self, front_end: nn.Module, d_proj: int = D_PROJ, dropout: float = 0.5,
                 zero_init_dense: bool = False):
        super().__init__()
        self.front_end = front_end
        self.projection = nn.Linear(front_end.d_front, d_proj)
        self.relu = nn.ReLU()
        self.dropout = nn.Dropout(dropout)
        self.dense = nn.Linear(d_proj, 1)
        if zero_init_dense:
            nn.init.zeros_(self.dense.weight)
            nn.init.zeros_(self.dense.bias)

    def head(self, frames: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        """Logits ``[batch]`` from front-end output ``[batch, n_frames, d_front]``."""
        h = self.dropout(self.relu(self.projection(frames)))
        if mask is None:
            pooled = h.mean(dim=1)
        else:
            m = mask.to(h.dtype).unsqueeze(-1)
            pooled = (h * m).sum(dim=1) / m.sum(dim=1).clamp_min(1.0)
        return self.dense(pooled).squeeze(-1)

    def forward(self, feats: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        return self.head(self.front_end(feats), mask)


def collate(features: list[torch.Tensor]) -> tuple[torch.Tensor, torch.Tensor]:
    """Zero-pad variable-length feature sequences; returns (batch, frame mask)."""
    lengths = [f.shape[0] for f in features]
    batch = torch.zeros(len(features), max(lengths), features[0].shape[1], dtype=features[0].dtype)
    mask = torch.zeros(len(features), max(lengths), dtype=torch.bool)
    for i, f in enumerate(features):
        batch[i, :f.shape[0]] = f
        mask[i, :f.shape[0]] = True
    return batch, mask


def forward(model: DetectorModel, w: Waveform, train_mode: bool = False) -> tuple[float, float]:
    """Score one waveform; returns (logit, probability of fake)."""
    if w.duration < MIN_DURATION:
        raise InputTooShortError(f"input is {w.duration:.3f} s, need at least {MIN_DURATION} s")
    model.train(train_mode)
    with torch.set_grad_enabled(train_mode):
        feats = model.front_end.features(w).unsqueeze(0)
        logit = model(feats)[0]
    logit = logit.detach()
    return float(logit), float(torch.sigmoid(logit))


def parameter_groups(model: DetectorModel, loss: nn.Module | None = None) -> dict[str, list[nn.Parameter]]:
    """Partition parameters into front_end / head / loss groups.

    A frozen front-end still owns its group; the optimizer skips groups
    whose parameters do not require gradients.
    """
    front = list(model.front_end.parameters())
    front_ids = {id(p) for p in front}
    head = [p for p in model.parameters() if id(p) not in front_ids]
    return {"front_end": front, "head": head, "loss": list(loss.parameters()) if loss is not None else []}
