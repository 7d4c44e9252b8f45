# %% [markdown]
# # Pseudo-fake synthesis from real audio only
#
# Every real utterance gets one fake twin.  Half go through
# self-conversion (transform the utterance, then convert the original
# towards its own transformed copy), the other half through
# self-reconstruction (vocoder round trip followed by RawBoost).  Either
# way the fake keeps its source speaker, so speaker identity carries no
# label information.

# %%
import tempfile
from pathlib import Path

from afss.manifest import provenance_counts
from afss.synthesis import generate_corpus
from afss.toy import make_toy_corpus

work = Path(tempfile.mkdtemp(prefix="afss_demo_"))
reals = make_toy_corpus(work / "real", n_utterances=16, n_speakers=4, duration=1.0, seed=0)
corpus = generate_corpus(reals, work / "fake", seed=0)
print(provenance_counts(reals + corpus.records))

# %% [markdown]
# The transform log records what happened to each fake.

# %%
speaker_of = {r.utterance_id: r.speaker_id for r in reals}
for rec in corpus.records[:6]:
    entry = rec.transform_log[0]
    same = rec.speaker_id == speaker_of[entry["source"]]
    print(f"{rec.utterance_id:18s} {entry['stage']:8s} {entry['kind']:15s} same speaker: {same}")

# %% [markdown]
# For the cross-speaker baseline the converter is pointed at an
# utterance of somebody else instead.

# %%
cross = generate_corpus(reals, work / "cross", mode="cross_vc", seed=0)
for rec in cross.records[:4]:
    entry = rec.transform_log[0]
    print(f"{rec.utterance_id:18s} {entry['speaker']} -> {entry['target_speaker']}")
