"""Class re-weighting derived from a transport plan over probability rows.

The plan-cost Hadamard product flags mass moved at high cost (class
mismatch between domains). Summing it per source class, combined with a
class-size penalty, yields inverse weights: classes cheaply matched to the
target batch come out large, mismatched or oversized classes come out
small. Weights are recomputed fresh for every mini-batch.
"""

from __future__ import annotations

import logging

import numpy as np

from .ot import TransportPlan

log = logging.getLogger(__name__)

DEFAULT_EPS_FLOOR = 1e-8


def guide_matrix(plan: TransportPlan | np.ndarray, cost: np.ndarray) -> np.ndarray:
    """Elementwise product of the coupling and the cost matrix."""
    gamma = plan.gamma if isinstance(plan, TransportPlan) else np.asarray(plan)
    cost = np.asarray(cost, dtype=np.float64)
    if gamma.shape != cost.shape:
        raise ValueError(f"shape mismatch: plan {gamma.shape} vs cost {cost.shape}")
    return gamma * cost


def class_weights(
    guide: np.ndarray,
    src_labels: np.ndarray,
    alpha: float,
    eps_floor: float = DEFAULT_EPS_FLOOR,
    counts: dict[int, int] | None = None,
) -> dict[int, float]:
    """Inverse guided-mass weights per source class present in the batch.

    For class k:  w_k = 1 / (count_k**alpha * sum of guide rows with label k),
    the denominator floored at ``eps_floor`` so perfectly matched classes
    (zero-cost rows) stay finite. ``counts`` overrides the per-batch class
    counts with dataset-level ones when supplied.
    """
    guide = np.asarray(guide, dtype=np.float64)
    src_labels = np.asarray(src_labels)
    if guide.ndim != 2 or guide.shape[0] != src_labels.shape[0]:
        raise ValueError("guide rows must match src_labels length")
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    row_mass = guide.sum(axis=1)
    weights: dict[int, float] = {}
    for k in np.unique(src_labels):
        k = int(k)
        mask = src_labels == k
        cnt = counts[k] if counts is not None else int(mask.sum())
        denom = float(cnt) ** alpha * float(row_mass[mask].sum())
        if denom < eps_floor:
            log.debug("class %d guided mass %.3e floored at %.1e", k, denom, eps_floor)
            denom = eps_floor
        weights[k] = 1.0 / denom
    return weights


def normalize_weights(w: dict[int, float], src_labels: np.ndarray) -> dict[int, float]:
    """Rescale so the per-sample weights of this batch average to 1."""
    src_labels = np.asarray(src_labels)
    total = float(sum(w[int(y)] for y in src_labels))
    if total <= 0.0:
        raise ValueError("cannot normalize all-zero class weights")
    scale = src_labels.shape[0] / total
    return {k: wk * scale for k, wk in w.items()}


def per_sample_weights(w: dict[int, float], labels: np.ndarray) -> np.ndarray:
    """Expand class weights to a per-sample vector v[i] = w[labels[i]]."""
    labels = np.asarray(labels)
    out = np.empty(labels.shape[0])
    for i, y in enumerate(labels):
        y = int(y)
        if y not in w:
            raise KeyError(f"no weight entry for class {y}")
        out[i] = w[y]
    return out
