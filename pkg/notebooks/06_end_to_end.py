# %% [markdown]
# # End to end through the command line
#
# A small synthetic corpus goes through `synthesize`, `train` and
# `evaluate` exactly as a user would run them.  Reals and fakes share
# speakers, so a low EER means the detector picked up synthesis
# artifacts rather than voices.

# %%
import json
import tempfile
from pathlib import Path

from afss.cli import run
from afss.manifest import read_manifest, write_manifest
from afss.toy import make_toy_corpus

work = Path(tempfile.mkdtemp(prefix="afss_e2e_"))
make_toy_corpus(work / "real", n_utterances=120, n_speakers=8, duration=2.0, seed=0)
(work / "config.toml").write_text("""
seed = 0

[training]
lr_front = 1e-4
lr_head = 1e-3
warmup_epochs = 1
max_epochs = 10
""")
config = ["--config", str(work / "config.toml"), "--run-dir", str(work / "run")]

# %%
assert run(["synthesize", *config, str(work / "real" / "real.tsv")]) == 0

# %% [markdown]
# Hold out the last quarter of the source utterances (and their fakes).

# %%
records = read_manifest(work / "run" / "manifests" / "train.tsv")
source_index = {r.utterance_id: int(r.utterance_id[3:7]) for r in records}
splits = {"train": lambda i: i < 72, "dev": lambda i: 72 <= i < 90, "eval": lambda i: i >= 90}
for name, keep in splits.items():
    write_manifest([r for r in records if keep(source_index[r.utterance_id])], work / f"{name}.tsv")

# %%
assert run(["train", *config, "--train-manifest", str(work / "train.tsv"),
            "--dev-manifest", str(work / "dev.tsv")]) == 0
assert run(["evaluate", "--checkpoint", str(work / "run" / "checkpoints" / "best.pt"),
            "--out", str(work / "eval"), str(work / "eval.tsv")]) == 0

# %%
summary = json.loads((work / "eval" / "summary.json").read_text())
print(json.dumps(summary["datasets"]["eval"], indent=2))
