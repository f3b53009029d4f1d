"""Aggregation of per-model predictions, temporal smoothing, confidence.

Aggregation over models supports majority voting, summed-logit voting,
and summed-softmax voting; all three summaries are always populated so
rankings can be computed in any mode afterwards. Aggregation over time
averages summed-logit vectors over a centered uniform kernel of
neighboring minutes before the argmax.

Ties in any argmax break toward the lower class index (OFF < ON < DYS).
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .engine import softmax
from .errors import InsufficientDataError, PdmotorError
from .states import N_STATES

MAJORITY = "majority"
LOGIT_SUM = "logit_sum"
SOFTMAX_SUM = "softmax_sum"
AGGREGATION_MODES = (MAJORITY, LOGIT_SUM, SOFTMAX_SUM)

AGREEMENT = "agreement"
LOGIT = "logit"
SOFTMAX = "softmax"
CONFIDENCE_MODES = (AGREEMENT, LOGIT, SOFTMAX)

DEFAULT_GAP_LIMIT = 10  # minutes; smoothing never bridges longer gaps


@dataclass
class EnsemblePrediction:
    """Aggregated prediction for one window."""

    patient_id: str
    minute_index: int
    true_label: int
    per_model_logits: np.ndarray  # (n_models, n_classes)
    per_model_labels: np.ndarray  # (n_models,)
    aggregated_label: int
    agreement: float              # vote fraction for the aggregated label
    summed_logits: np.ndarray
    summed_softmax: np.ndarray

    def confidence(self, mode: str) -> float:
        if mode == AGREEMENT:
            return self.agreement
        if mode == LOGIT:
            return float(self.summed_logits.max())
        if mode == SOFTMAX:
            return float(self.summed_softmax.max())
        raise ValueError(f"unknown confidence mode {mode!r}")


def _majority_label(labels: np.ndarray) -> int:
    counts = np.bincount(labels, minlength=N_STATES)
    return int(np.argmax(counts))  # argmax tie -> lowest index


def aggregate(
    per_model_logits,
    mode: str = MAJORITY,
    patient_id: str = "",
    minute_index: int = 0,
    true_label: int = -1,
) -> EnsemblePrediction:
    """Combine one window's per-model logits into a single prediction."""
    logits = np.asarray(per_model_logits, dtype=np.float64)
    if logits.ndim != 2 or logits.shape[0] == 0:
        raise InsufficientDataError("aggregate needs at least one model's logits")
    if mode not in AGGREGATION_MODES:
        raise ValueError(f"unknown aggregation mode {mode!r}")

    labels = np.argmax(logits, axis=1)
    summed_logits = logits.sum(axis=0)
    summed_softmax = softmax(logits).sum(axis=0)

    if mode == MAJORITY:
        agg = _majority_label(labels)
    elif mode == LOGIT_SUM:
        agg = int(np.argmax(summed_logits))
    else:
        agg = int(np.argmax(summed_softmax))
    agreement = float(np.mean(labels == agg))

    return EnsemblePrediction(
        patient_id=patient_id,
        minute_index=minute_index,
        true_label=true_label,
        per_model_logits=logits,
        per_model_labels=labels,
        aggregated_label=agg,
        agreement=agreement,
        summed_logits=summed_logits,
        summed_softmax=summed_softmax,
    )


@dataclass
class SmoothingKernel:
    """Uniform temporal kernel: window 0 (identity), an odd positive width
    in minutes (centered), or infinite (whole-day sum)."""

    window_minutes: float = 0  # 0, odd positive int, or math.inf

    def __post_init__(self):
        w = self.window_minutes
        if w == math.inf:
            return
        if int(w) != w or w < 0 or (w > 0 and int(w) % 2 == 0):
            raise ValueError(f"finite window must be 0 or odd positive, got {w}")
        self.window_minutes = int(w)


def smooth(
    minute_indices,
    summed_logits,
    kernel: SmoothingKernel,
    gap_limit: int = DEFAULT_GAP_LIMIT,
) -> np.ndarray:
    """Labels after uniform temporal averaging of summed-logit vectors.

    Entries must be one patient's minutes in increasing order; minutes
    missing from the sequence (no-motion/unlabeled) are simply absent.
    The kernel covers neighbors within +-(w-1)/2 minutes, truncated at
    sequence ends, but never reaches across a hole of more than
    `gap_limit` consecutive missing minutes. The infinite kernel argmaxes
    the sum over the whole sequence, i.e. predicts the day's majority
    state for every minute.
    """
    minutes = np.asarray(minute_indices, dtype=np.int64)
    logits = np.asarray(summed_logits, dtype=np.float64)
    if minutes.size == 0:
        raise InsufficientDataError("cannot smooth an empty prediction sequence")
    if logits.shape != (minutes.size, N_STATES):
        raise PdmotorError(
            f"logits must be ({minutes.size}, {N_STATES}), got {logits.shape}"
        )
    if np.any(np.diff(minutes) <= 0):
        raise PdmotorError("minutes must be strictly increasing")

    if kernel.window_minutes == math.inf:
        total = logits.sum(axis=0)
        return np.full(minutes.size, int(np.argmax(total)), dtype=np.int64)
    if kernel.window_minutes == 0:
        return np.argmax(logits, axis=1).astype(np.int64)

    half = (kernel.window_minutes - 1) // 2
    # segment boundaries wherever the minute axis jumps by more than gap_limit+1
    segment = np.zeros(minutes.size, dtype=np.int64)
    segment[1:] = np.cumsum(np.diff(minutes) > gap_limit + 1)

    out = np.empty(minutes.size, dtype=np.int64)
    for i in range(minutes.size):
        in_window = (
            (segment == segment[i])
            & (minutes >= minutes[i] - half)
            & (minutes <= minutes[i] + half)
        )
        out[i] = int(np.argmax(logits[in_window].mean(axis=0)))
    return out


@dataclass
class ConfidenceRanking:
    """Total order over predictions by a confidence score, descending.

    Score ties break by (patient_id, minute_index) ascending, so the
    ranking is deterministic.
    """

    mode: str
    scores: np.ndarray
    order: np.ndarray  # indices into the prediction list, best first

    def top_fraction(self, fraction: float) -> np.ndarray:
        """Indices of the top floor(fraction * n) predictions."""
        k = int(np.floor(fraction * self.order.size))
        return self.order[:k]


def confidence_rank(preds: list[EnsemblePrediction], mode: str) -> ConfidenceRanking:
    if mode not in CONFIDENCE_MODES:
        raise ValueError(f"unknown confidence mode {mode!r}")
    scores = np.array([p.confidence(mode) for p in preds], dtype=np.float64)
    keyed = sorted(
        range(len(preds)),
        key=lambda i: (-scores[i], preds[i].patient_id, preds[i].minute_index),
    )
    return ConfidenceRanking(mode=mode, scores=scores, order=np.asarray(keyed, dtype=np.int64))


def interpolate_confident(
    preds: list[EnsemblePrediction],
    ranking: ConfidenceRanking,
    top_fraction: float = 0.2,
) -> tuple[np.ndarray, list[str]]:
    """Full-day labels from the high-confidence predictions.

    Every prediction outside the top fraction takes the aggregated label
    of the nearest selected prediction of the same patient (equidistant
    ties go to the earlier minute). Returns (labels aligned with preds,
    list of UNCOVERED patients that had no selected prediction at all);
    uncovered patients keep their own aggregated labels.
    """
    selected = set(int(i) for i in ranking.top_fraction(top_fraction))
    if not selected:
        raise InsufficientDataError("top fraction selects no predictions")

    by_patient: dict[str, list[int]] = {}
    for i, p in enumerate(preds):
        by_patient.setdefault(p.patient_id, []).append(i)

    labels = np.array([p.aggregated_label for p in preds], dtype=np.int64)
    uncovered = []
    for patient, indices in sorted(by_patient.items()):
        anchors = sorted(
            (i for i in indices if i in selected), key=lambda i: preds[i].minute_index
        )
        if not anchors:
            uncovered.append(patient)
            continue
        anchor_minutes = np.array([preds[i].minute_index for i in anchors])
        for i in indices:
            if i in selected:
                continue
            dist = np.abs(anchor_minutes - preds[i].minute_index)
            # ties: anchors are in minute order, argmin takes the earlier one
            labels[i] = preds[anchors[int(np.argmin(dist))]].aggregated_label
    return labels, uncovered
