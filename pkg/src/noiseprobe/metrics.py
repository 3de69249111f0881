"""Exact rank-based AUC and average precision, plus per-generator reports.

Scores are detection scores, oriented so that higher means more likely
generated. Ties are handled exactly: midrank correction for AUC, block
processing for AP, so quantized or degenerate score sets (every score
equal under zero noise) evaluate to their analytic values.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .core import Label, ScoreRecord


class MetricsError(ValueError):
    pass


def _scores_and_mask(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(list(scores), dtype=np.float64)
    y = np.asarray([Label(l) is Label.FAKE for l in labels], dtype=bool)
    if s.ndim != 1 or s.shape != y.shape:
        raise MetricsError(
            f"scores and labels must be equal-length 1-D, got {s.shape} and {y.shape}"
        )
    if not np.all(np.isfinite(s)):
        raise MetricsError("scores must be finite")
    n_pos = int(y.sum())
    if n_pos == 0 or n_pos == y.size:
        raise MetricsError(
            "both classes are required: got "
            f"{n_pos} fake and {y.size - n_pos} real samples"
        )
    return s, y


def roc_auc(scores, labels) -> float:
    """P(fake score > real score) + 0.5 * P(tie), via midranks.

    Equivalent to the Mann-Whitney U statistic normalized by the number of
    (fake, real) pairs; an all-ties input gives exactly 0.5.
    """
    s, y = _scores_and_mask(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    ranks = rankdata(s, method="average")
    u = float(ranks[y].sum()) - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def average_precision(scores, labels) -> float:
    """Non-interpolated AP over the descending-score sweep, fake positive.

    Samples sharing a score enter the sweep as one block, so the value is
    independent of how ties happen to be ordered.
    """
    s, y = _scores_and_mask(scores, labels)
    n_pos = int(y.sum())
    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    y_sorted = y[order].astype(np.float64)
    tp = np.cumsum(y_sorted)
    # Index of the last element of each tied block in the sorted sweep.
    block_ends = np.nonzero(np.diff(s_sorted))[0]
    block_ends = np.concatenate([block_ends, [s_sorted.size - 1]])
    precision = tp[block_ends] / (block_ends + 1.0)
    recall = tp[block_ends] / n_pos
    recall_steps = np.diff(np.concatenate([[0.0], recall]))
    return float(np.sum(recall_steps * precision))


@dataclass(frozen=True)
class GeneratorMetrics:
    auc: float
    ap: float
    n_fake: int
    accuracy: float | None = None

    def __post_init__(self):
        for name, v in (("auc", self.auc), ("ap", self.ap)):
            if not (0.0 <= v <= 1.0):
                raise MetricsError(f"{name} must lie in [0, 1], got {v}")
        if self.n_fake < 1:
            raise MetricsError(f"n_fake must be >= 1, got {self.n_fake}")

    def to_dict(self) -> dict:
        d = {"auc": self.auc, "ap": self.ap, "n_fake": self.n_fake}
        if self.accuracy is not None:
            d["accuracy"] = self.accuracy
        return d


@dataclass(frozen=True)
class EvalReport:
    """Per-generator AUC/AP against one shared real pool.

    Averages are plain unweighted means over generators, mirroring the
    one-row-per-generator, trailing-average table layout.
    """

    per_generator: dict[str, GeneratorMetrics]
    n_real: int
    average_auc: float
    average_ap: float
    epsilon_used: float | None
    config_digest: str
    tnr_real: float | None = None
    calibration_convention: str | None = None

    def to_dict(self) -> dict:
        return {
            "per_generator": {
                g: m.to_dict() for g, m in sorted(self.per_generator.items())
            },
            "n_real": self.n_real,
            "average_auc": self.average_auc,
            "average_ap": self.average_ap,
            "epsilon_used": self.epsilon_used,
            "tnr_real": self.tnr_real,
            "calibration_convention": self.calibration_convention,
            "config_digest": self.config_digest,
        }

    def to_json_file(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def to_csv_file(self, path) -> None:
        """Flat per-generator table: generator, auc, ap, n."""
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["generator", "auc", "ap", "n"])
            for g, m in sorted(self.per_generator.items()):
                writer.writerow([g, str(m.auc), str(m.ap), m.n_fake])
            writer.writerow(["average", str(self.average_auc), str(self.average_ap), ""])


def evaluate(
    real_scores,
    fake_scores_by_generator: dict,
    epsilon: float | None = None,
    config_digest: str = "",
    calibration_convention: str | None = None,
) -> EvalReport:
    """Score every generator against the same real pool.

    Scores are detection scores (1 - similarity). When epsilon is given,
    threshold accuracy is included, using the boundary-inclusive rule:
    predicted fake iff detection score >= 1 - epsilon.
    """
    if epsilon is not None and not (
        math.isfinite(float(epsilon)) and -1.0 <= float(epsilon) <= 1.0
    ):
        raise MetricsError(f"epsilon must lie in [-1, 1], got {epsilon}")
    real = np.asarray(list(real_scores), dtype=np.float64)
    if real.size == 0:
        raise MetricsError("real score pool is empty")
    if not fake_scores_by_generator:
        raise MetricsError("no generators to evaluate")
    real_labels = [Label.REAL] * real.size

    fake_cut = None if epsilon is None else 1.0 - float(epsilon)
    tnr_real = None
    if fake_cut is not None:
        tnr_real = float(np.sum(real < fake_cut)) / real.size

    per_generator: dict[str, GeneratorMetrics] = {}
    for gen in sorted(fake_scores_by_generator):
        fake = np.asarray(list(fake_scores_by_generator[gen]), dtype=np.float64)
        if fake.size == 0:
            raise MetricsError(f"generator {gen!r} has no scores")
        scores = np.concatenate([real, fake])
        labels = real_labels + [Label.FAKE] * fake.size
        accuracy = None
        if fake_cut is not None:
            correct = np.sum(real < fake_cut) + np.sum(fake >= fake_cut)
            accuracy = float(correct) / (real.size + fake.size)
        per_generator[gen] = GeneratorMetrics(
            auc=roc_auc(scores, labels),
            ap=average_precision(scores, labels),
            n_fake=int(fake.size),
            accuracy=accuracy,
        )

    aucs = [m.auc for m in per_generator.values()]
    aps = [m.ap for m in per_generator.values()]
    return EvalReport(
        per_generator=per_generator,
        n_real=int(real.size),
        average_auc=float(np.mean(aucs)),
        average_ap=float(np.mean(aps)),
        epsilon_used=None if epsilon is None else float(epsilon),
        config_digest=config_digest,
        tnr_real=tnr_real,
        calibration_convention=calibration_convention,
    )


def evaluate_records(
    records: list[ScoreRecord],
    epsilon: float | None = None,
    config_digest: str = "",
    calibration_convention: str | None = None,
) -> EvalReport:
    """Split score records into the real pool and per-generator fake pools."""
    real = [r.detection_score for r in records if r.label is Label.REAL]
    by_gen: dict[str, list[float]] = {}
    for r in records:
        if r.label is Label.FAKE:
            by_gen.setdefault(r.generator, []).append(r.detection_score)
    if not real:
        raise MetricsError("no real samples among the score records")
    if not by_gen:
        raise MetricsError("no fake samples among the score records")
    return evaluate(real, by_gen, epsilon, config_digest, calibration_convention)
