"""Accuracy and answer-distribution reporting.

Accuracy is exact-match, reported overall and per question type. The
predicted-answer histogram is compared against the evaluated split's label
distribution with the Jensen-Shannon divergence (natural log), which stays
finite when either distribution has zeros.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DimensionError, DomainError


@dataclass(frozen=True)
class EvalReport:
    acc_all: float
    acc_per_qtype: np.ndarray
    answer_distribution: np.ndarray
    js_divergence_to_test: float


def js_divergence(p, q):
    """Jensen-Shannon divergence, 0.5*KL(p||m) + 0.5*KL(q||m) with m=(p+q)/2.

    Zero-probability entries contribute zero. Bounded by ln 2.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise DimensionError(f"distribution shapes differ: {p.shape} vs {q.shape}")
    if np.any(p < 0) or np.any(q < 0):
        raise DomainError("distributions must be nonnegative")
    for name, dist in (("p", p), ("q", q)):
        if abs(dist.sum() - 1.0) > 1e-9:
            raise DomainError(f"{name} sums to {dist.sum()!r}, expected 1 within 1e-9")
    m = 0.5 * (p + q)

    def half_kl(u):
        mask = u > 0
        return 0.5 * float(np.sum(u[mask] * np.log(u[mask] / m[mask])))

    return half_kl(p) + half_kl(q)


def _distribution(indices, vocab):
    hist = np.bincount(indices, minlength=vocab).astype(np.float64)
    return hist / hist.sum()


def evaluate_predictions(preds, labels, qtypes, vocab_size, num_qtypes):
    """Array-level scoring core shared by evaluate() and the re-fusion command."""
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    qtypes = np.asarray(qtypes)
    if preds.size == 0:
        raise ContractError("cannot evaluate zero predictions")

    correct = preds == labels
    per_type = np.zeros(num_qtypes)
    for t in range(num_qtypes):
        mask = qtypes == t
        per_type[t] = correct[mask].mean() if mask.any() else 0.0

    pred_dist = _distribution(preds, vocab_size)
    label_dist = _distribution(labels, vocab_size)
    return EvalReport(
        acc_all=float(correct.mean()),
        acc_per_qtype=per_type,
        answer_distribution=pred_dist,
        js_divergence_to_test=js_divergence(pred_dist, label_dist),
    )


def evaluate(predict, split):
    """Score a predictor over a split.

    predict maps a SyntheticSample to an answer index. The report's JS field
    compares the predicted-answer distribution with the split's own label
    distribution.
    """
    if not split.samples:
        raise ContractError("cannot evaluate an empty split")
    _, _, labels, qtypes = split.feature_arrays()
    preds = np.array([int(predict(s)) for s in split.samples])
    return evaluate_predictions(preds, labels, qtypes, split.vocab_size, split.num_qtypes)
