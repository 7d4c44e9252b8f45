# %% [markdown]
# # Reweighting loss, balanced batches and the learning-rate schedule

# %%
import numpy as np
import torch

from afss.training import BalancedBatchSampler, ReweightingLoss, TrainConfig, loss_weights, lr_at, reweighted_bce

# %% [markdown]
# The two class weights come from unconstrained parameters through a
# sigmoid, so a fake is always weighted between 1 and 2 and a real
# between 0 and 1.  At initialisation the ratio is 3 to 1.

# %%
for w in (-5.0, 0.0, 5.0):
    w_fake, w_real = loss_weights(w, w)
    print(f"w_tilde={w:+.0f}: w_fake={w_fake:.6f} w_real={w_real:.6f}")
print("loss(y=1, p=0.5) =", reweighted_bce(1, 0.5, 0.0, 0.0))
print("loss(y=0, p=0.5) =", reweighted_bce(0, 0.5, 0.0, 0.0))

loss = ReweightingLoss()
value = loss(torch.tensor([0.9, 0.2]), torch.tensor([1.0, 0.0]))
value.backward()
print("gradient on w_tilde_fake, w_tilde_real:", loss.w_tilde_fake.grad.item(), loss.w_tilde_real.grad.item())

# %% [markdown]
# Batches hold six reals and six fakes; the epoch ends when the smaller
# pool is used up.

# %%
sampler = BalancedBatchSampler([False] * 50 + [True] * 100, 12)
batches = list(sampler.epoch(np.random.default_rng(0)))
print(len(batches), "batches; first batch:", batches[0])

# %% [markdown]
# Warm-up over five epochs, then a linear decay to 1e-6.

# %%
cfg = TrainConfig()
steps = 100
total, warmup = cfg.max_epochs * steps, cfg.warmup_epochs * steps
for step in (0, warmup // 2, warmup, total // 2, total):
    print(f"step {step:5d}: head lr {lr_at(step, total, warmup, cfg.lr_head, cfg.final_lr):.2e}")
