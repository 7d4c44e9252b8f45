# %% [markdown]
# # Scoring metrics
#
# Scores are "higher means more likely fake".  The equal error rate is
# found where the false-acceptance and false-rejection curves cross,
# interpolating between neighbouring thresholds.

# %%
import numpy as np

from afss.metrics import ScoreSet, eer, summarize

s = ScoreSet.from_arrays([0, 0, 0, 1, 1, 1], [0.1, 0.2, 0.6, 0.3, 0.7, 0.9])
rate, threshold = eer(s)
print(f"EER {rate:.4f} at threshold {threshold:.3f}")
print(summarize(s))

# %% [markdown]
# A strictly increasing remapping of the scores does not move the EER.

# %%
rng = np.random.default_rng(0)
labels = rng.random(500) < 0.5
scores = rng.normal(size=500) + 1.5 * labels
for name, f in (("identity", lambda x: x), ("2x+1", lambda x: 2 * x + 1), ("tanh", np.tanh)):
    print(f"{name:8s} EER {eer(ScoreSet.from_arrays(labels, f(scores)))[0]:.6f}")
