"""EER, AUC, accuracy and average precision over detector scores.

Scores are oriented "higher = more fake" everywhere; fake is the positive
class.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import rankdata


class MetricError(ValueError):
    """Metric undefined for the given score set (e.g. a class is missing)."""


@dataclass
class ScoreSet:
    utterance_ids: list[str]
    is_fake: np.ndarray
    scores: np.ndarray
    failures: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.is_fake = np.asarray(self.is_fake, dtype=bool).reshape(-1)
        self.scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        if not (len(self.utterance_ids) == self.is_fake.shape[0] == self.scores.shape[0]):
            raise ValueError("ids, labels and scores must have equal length")
        if not np.all(np.isfinite(self.scores)):
            raise ValueError("scores must be finite")

    @classmethod
    def from_arrays(cls, is_fake, scores) -> "ScoreSet":
        scores = np.asarray(scores, dtype=np.float64)
        return cls([f"u{i}" for i in range(scores.shape[0])], is_fake, scores)

    def __len__(self):
        return self.scores.shape[0]

    @property
    def n_fake(self) -> int:
        return int(self.is_fake.sum())

    @property
    def n_real(self) -> int:
        return len(self) - self.n_fake

    def _require_both(self, what: str):
        if self.n_fake == 0 or self.n_real == 0:
            raise MetricError(f"{what} needs both real and fake entries "
                              f"(got {self.n_real} real, {self.n_fake} fake)")


def eer(s: ScoreSet) -> tuple[float, float]:
    """Equal error rate and its threshold.

    FAR(t) is the fraction of real scores >= t and FRR(t) the fraction of
    fake scores < t, evaluated at every distinct score and above the
    maximum.  The crossing is linearly interpolated between the two
    adjacent thresholds that bracket it.
    """
    s._require_both("EER")
    thresholds = np.unique(s.scores)
    real = np.sort(s.scores[~s.is_fake])
    fake = np.sort(s.scores[s.is_fake])
    far = 1.0 - np.searchsorted(real, thresholds, side="left") / real.shape[0]
    frr = np.searchsorted(fake, thresholds, side="left") / fake.shape[0]
    # past the maximum score nothing is accepted
    far = np.append(far, 0.0)
    frr = np.append(frr, 1.0)
    diff = far - frr
    # diff[0] = 1 and diff[-1] = -1, so the first crossing has i >= 1
    i = int(np.argmax(diff <= 0))
    if diff[i] == 0:
        return float(far[i]), float(thresholds[i])
    lam = diff[i - 1] / (diff[i - 1] - diff[i])
    rate = far[i - 1] + lam * (far[i] - far[i - 1])
    if i < thresholds.shape[0]:
        threshold = thresholds[i - 1] + lam * (thresholds[i] - thresholds[i - 1])
    else:
        threshold = np.nextafter(thresholds[-1], np.inf)
    return float(rate), float(threshold)


def auc(s: ScoreSet) -> float:
    """ROC AUC as the Mann-Whitney statistic, ties counted one half."""
    s._require_both("AUC")
    ranks = rankdata(s.scores)
    n_f, n_r = s.n_fake, s.n_real
    u = ranks[s.is_fake].sum() - n_f * (n_f + 1) / 2.0
    return float(u / (n_f * n_r))


def accuracy(s: ScoreSet, threshold: float = 0.5) -> float:
    if len(s) == 0:
        raise MetricError("accuracy of an empty score set")
    return float(np.mean((s.scores >= threshold) == s.is_fake))


def average_precision(s: ScoreSet) -> float:
    """AP over descending-score prefixes; equal scores enter together."""
    if s.n_fake == 0:
        raise MetricError("average precision needs at least one fake entry")
    order = np.argsort(-s.scores, kind="stable")
    scores, pos = s.scores[order], s.is_fake[order]
    # last index of each group of equal scores
    ends = np.flatnonzero(np.append(scores[1:] != scores[:-1], True))
    tp = np.cumsum(pos)[ends]
    seen = ends + 1
    recall = tp / s.n_fake
    precision = tp / seen
    return float(np.sum(np.diff(np.concatenate([[0.0], recall])) * precision))


def summarize(s: ScoreSet, threshold: float = 0.5) -> dict:
    rate, eer_threshold = eer(s)
    return {
        "eer": rate,
        "auc": auc(s),
        "acc": accuracy(s, threshold),
        "ap": average_precision(s),
        "n_real": s.n_real,
        "n_fake": s.n_fake,
        "threshold": threshold,
        "eer_threshold": eer_threshold,
    }


def average_summaries(summaries: dict[str, dict]) -> dict:
    """Unweighted mean of each metric across datasets."""
    keys = ("eer", "auc", "acc", "ap")
    return {k: float(np.mean([summ[k] for summ in summaries.values()])) for k in keys}


def write_score_file(s: ScoreSet, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for utt, score in zip(s.utterance_ids, s.scores):
            fh.write(f"{utt} {float(score)!r}\n")


def read_score_file(path) -> dict[str, float]:
    scores = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                utt, value = line.split()
                scores[utt] = float(value)
    return scores


class ScoringError(RuntimeError):
    """Some utterances could not be scored; the files for the rest were written."""

    def __init__(self, failures: list[str], scores: ScoreSet):
        super().__init__(f"{len(failures)} utterance(s) failed: " + "; ".join(failures[:5]))
        self.failures = failures
        self.scores = scores


def write_scores(model, eval_records, path, threshold: float = 0.5) -> ScoreSet:
    """Score ``eval_records`` in eval mode and write ``utterance_id score`` lines.

    A summary JSON with all four metrics is written next to the score file
    (same stem, ``.json``).  Unreadable utterances are skipped and reported
    through :class:`ScoringError` after both files are written; metrics on
    an empty or single-class set raise :class:`MetricError`.
    """
    from .training import FeatureCache, score_records

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    features = FeatureCache(model)
    ok, failures = [], []
    for rec in eval_records:
        try:
            features(rec)
            ok.append(rec)
        except (OSError, ValueError) as exc:
            failures.append(f"{rec.utterance_id}: {exc}")
    scores = score_records(model, ok, features)
    scores.failures = failures
    write_score_file(scores, path)
    summary = summarize(scores, threshold)
    with open(path.with_suffix(".json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if failures:
        raise ScoringError(failures, scores)
    return scores
