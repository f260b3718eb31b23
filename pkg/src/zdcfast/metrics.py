"""Evaluation: empirical 1D Wasserstein distance over the five readout
channels, binary classification metrics, and histogram export."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .detector import N_CHANNELS, extract_channels_batch
from .errors import ValidationError


def wasserstein1d(a, b) -> float:
    """Exact W1 between the empirical distributions of two samples.

    Equals the integral of |F_a^{-1}(q) - F_b^{-1}(q)| over q in (0,1),
    evaluated here as the area between the two empirical CDFs; for
    equal-size samples it reduces to the mean absolute difference of the
    sorted values.
    """
    a = np.sort(np.asarray(a, dtype=np.float64).reshape(-1))
    b = np.sort(np.asarray(b, dtype=np.float64).reshape(-1))
    if a.size == 0 or b.size == 0:
        raise ValidationError("wasserstein1d: empty sample")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValidationError("wasserstein1d: non-finite sample values")
    support = np.sort(np.concatenate([a, b]))
    deltas = np.diff(support)
    cdf_a = np.searchsorted(a, support[:-1], side="right") / a.size
    cdf_b = np.searchsorted(b, support[:-1], side="right") / b.size
    return float(np.sum(np.abs(cdf_a - cdf_b) * deltas))


@dataclass(frozen=True)
class ChannelReport:
    """Per-channel W1 distances plus their arithmetic mean."""

    distances: tuple
    mean: float
    n_real: int
    n_gen: int

    def to_dict(self) -> dict:
        return {"per_channel_w1": list(self.distances), "mean_w1": self.mean,
                "n_real": self.n_real, "n_gen": self.n_gen}


def channel_wasserstein(real_responses: np.ndarray, gen_responses: np.ndarray) -> ChannelReport:
    """W1 per readout channel between two sets of (flattened) responses."""
    real_ch = extract_channels_batch(real_responses)
    gen_ch = extract_channels_batch(gen_responses)
    if real_ch.shape[0] == 0 or gen_ch.shape[0] == 0:
        raise ValidationError("channel_wasserstein: empty sample set")
    return channel_wasserstein_from_channels(real_ch, gen_ch)


def channel_wasserstein_from_channels(real_ch: np.ndarray, gen_ch: np.ndarray) -> ChannelReport:
    distances = tuple(wasserstein1d(real_ch[:, k], gen_ch[:, k]) for k in range(N_CHANNELS))
    return ChannelReport(distances=distances, mean=float(np.mean(distances)),
                         n_real=int(real_ch.shape[0]), n_gen=int(gen_ch.shape[0]))


@dataclass(frozen=True)
class ClassificationReport:
    """Binary metrics; the positive class is a non-zero response."""

    precision: dict
    recall: dict
    f1: dict
    accuracy: float
    confusion: dict

    def to_dict(self) -> dict:
        return {"precision": self.precision, "recall": self.recall, "f1": self.f1,
                "accuracy": self.accuracy, "confusion": self.confusion}


def _prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


def classification_report(pred, truth, threshold: float = 0.5) -> ClassificationReport:
    """Standard precision/recall/F1/accuracy for labels 1 = non-zero response.

    `pred` may be hard labels or probabilities; probabilities are cut at
    `threshold`.
    """
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    truth = np.asarray(truth).reshape(-1).astype(int)
    if pred.shape[0] != truth.shape[0]:
        raise ValidationError(f"classification_report: length mismatch {pred.shape[0]} vs {truth.shape[0]}")
    if truth.min() == truth.max():
        raise ValidationError("classification_report: truth must contain both classes")
    labels = (pred >= threshold).astype(int)
    tp = int(np.sum((labels == 1) & (truth == 1)))
    fp = int(np.sum((labels == 1) & (truth == 0)))
    tn = int(np.sum((labels == 0) & (truth == 0)))
    fn = int(np.sum((labels == 0) & (truth == 1)))
    p_nz, r_nz, f_nz = _prf(tp, fp, fn)
    p_z, r_z, f_z = _prf(tn, fn, fp)
    return ClassificationReport(
        precision={"zero": p_z, "non_zero": p_nz},
        recall={"zero": r_z, "non_zero": r_nz},
        f1={"zero": f_z, "non_zero": f_nz},
        accuracy=(tp + tn) / truth.shape[0],
        confusion={"tp": tp, "fp": fp, "tn": tn, "fn": fn},
    )


def histogram_rows(samples, bins: int, value_range: tuple[float, float]) -> list[tuple[float, float, int]]:
    """(bin_lo, bin_hi, count) rows; bins are left-closed, last bin closed."""
    lo, hi = value_range
    if bins < 1:
        raise ValidationError(f"histogram: bins must be >= 1, got {bins}")
    if not (lo < hi):
        raise ValidationError(f"histogram: invalid range ({lo}, {hi})")
    samples = np.asarray(samples, dtype=np.float64).reshape(-1)
    counts, edges = np.histogram(samples, bins=bins, range=(lo, hi))
    return [(float(edges[i]), float(edges[i + 1]), int(counts[i])) for i in range(bins)]


def histogram_csv(samples, bins: int, value_range: tuple[float, float]) -> str:
    rows = histogram_rows(samples, bins, value_range)
    lines = ["bin_lo,bin_hi,count"]
    lines.extend(f"{lo:.9g},{hi:.9g},{count}" for lo, hi, count in rows)
    return "\n".join(lines) + "\n"
