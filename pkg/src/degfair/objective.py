"""The composite training objective.

Four terms plus weight regularization, combined as

    total = classification + mu * group_parity
            + lambda * (cross_context + modulation + weights)

All sums run over training nodes (not means); the parity and cross-context
terms restrict the low/high degree groups to their training intersections.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from degfair.autodiff import (
    Tensor,
    add,
    clamp_min,
    gather_rows,
    log,
    masked_sq_norm,
    mean_rows,
    mul,
    scalar_mul,
    sq_norm,
    sub,
    sum_all,
)
from degfair.layers import ForwardTrace, ModelParams

__all__ = [
    "LossBreakdown",
    "classification_loss",
    "fairness_loss",
    "debias_constraint",
    "film_constraint",
    "weight_regularizer",
    "total_loss",
]

PROB_FLOOR = 1e-12  # clamp before log; keeps L1 finite without visible bias


@dataclass
class LossBreakdown:
    """Scalar values of every objective term for one forward pass."""

    l1: float
    l2: float
    l3: float
    l4: float
    omega_reg: float
    mu: float
    lam: float
    total: float


def classification_loss(probs: Tensor, labels: np.ndarray, train_idx: np.ndarray) -> Tensor:
    """Summed cross-entropy of the true class over training nodes.

    Probabilities are clamped to >= 1e-12 before the log.
    """
    train_idx = np.asarray(train_idx, dtype=np.int64)
    if train_idx.size == 0:
        raise ValueError("classification loss needs a nonempty training set")
    onehot = np.zeros((train_idx.size, probs.shape[1]))
    onehot[np.arange(train_idx.size), np.asarray(labels)[train_idx]] = 1.0
    picked = gather_rows(probs, train_idx)
    logp = log(clamp_min(picked, PROB_FLOOR))
    return scalar_mul(sum_all(mul(logp, Tensor(onehot))), -1.0)


def fairness_loss(h_final: Tensor, low_tr: np.ndarray, high_tr: np.ndarray) -> Tensor:
    """Squared distance between the two groups' mean output rows."""
    low_tr = np.asarray(low_tr, dtype=np.int64)
    high_tr = np.asarray(high_tr, dtype=np.int64)
    if low_tr.size == 0 or high_tr.size == 0:
        warnings.warn(
            "one degree group has no training nodes; group-parity loss is 0",
            stacklevel=2,
        )
        return Tensor([[0.0]])
    mean_low = mean_rows(gather_rows(h_final, low_tr))
    mean_high = mean_rows(gather_rows(h_final, high_tr))
    return sq_norm(sub(mean_low, mean_high))


def _row_mask(idx: np.ndarray, num_rows: int) -> np.ndarray:
    mask = np.zeros(num_rows)
    mask[idx] = 1.0
    return mask


def debias_constraint(trace: ForwardTrace, low_tr: np.ndarray, high_tr: np.ndarray) -> Tensor:
    """Cross-group context penalty, summed over layers.

    Low-degree training nodes penalize the high-group context they do not
    use, and vice versa; both should be near zero for the opposite group.
    """
    low_tr = np.asarray(low_tr, dtype=np.int64)
    high_tr = np.asarray(high_tr, dtype=np.int64)
    total = Tensor([[0.0]])
    num_rows = trace.layers[0].debias_low.shape[0]
    low_mask = _row_mask(low_tr, num_rows)
    high_mask = _row_mask(high_tr, num_rows)
    for entry in trace.layers:
        if low_tr.size:
            total = add(total, masked_sq_norm(entry.debias_high, low_mask))
        if high_tr.size:
            total = add(total, masked_sq_norm(entry.debias_low, high_mask))
    return total


def film_constraint(trace: ForwardTrace, train_idx: np.ndarray) -> Tensor:
    """Squared norms of the scaling and shifting rows over training nodes."""
    train_idx = np.asarray(train_idx, dtype=np.int64)
    total = Tensor([[0.0]])
    if train_idx.size == 0:
        return total
    mask = _row_mask(train_idx, trace.layers[0].scale.shape[0])
    for entry in trace.layers:
        total = add(total, masked_sq_norm(entry.scale, mask))
        total = add(total, masked_sq_norm(entry.shift, mask))
    return total


def weight_regularizer(params: ModelParams, include_debias: bool = True) -> Tensor:
    """Sum of squared entries of every weight matrix; biases excluded."""
    total = Tensor([[0.0]])
    for w in params.weight_tensors(include_debias=include_debias):
        total = add(total, sq_norm(w))
    return total


# Untaped (plain numpy) term values, for reporting terms whose coefficient
# is zero without paying for their backward pass.


def group_gap_value(probs: np.ndarray, low_tr: np.ndarray, high_tr: np.ndarray) -> float:
    if len(low_tr) == 0 or len(high_tr) == 0:
        return 0.0
    gap = probs[low_tr].mean(axis=0) - probs[high_tr].mean(axis=0)
    return float(gap @ gap)


def cross_context_value(trace: ForwardTrace, low_tr: np.ndarray, high_tr: np.ndarray) -> float:
    total = 0.0
    for entry in trace.layers:
        if len(low_tr):
            rows = entry.debias_high.data[low_tr]
            total += float(np.einsum("ij,ij->", rows, rows))
        if len(high_tr):
            rows = entry.debias_low.data[high_tr]
            total += float(np.einsum("ij,ij->", rows, rows))
    return total


def modulation_value(trace: ForwardTrace, train_idx: np.ndarray) -> float:
    total = 0.0
    for entry in trace.layers:
        for t in (entry.scale, entry.shift):
            rows = t.data[train_idx]
            total += float(np.einsum("ij,ij->", rows, rows))
    return total


def weight_norm_value(params: ModelParams, include_debias: bool = True) -> float:
    return float(
        sum(
            np.einsum("ij,ij->", w.data, w.data)
            for w in params.weight_tensors(include_debias=include_debias)
        )
    )


def total_loss(
    l1: Tensor,
    l2: Tensor,
    l3: Tensor,
    l4: Tensor,
    omega_reg: Tensor,
    mu: float,
    lam: float,
) -> tuple[Tensor, LossBreakdown]:
    """Combine the terms; returns the taped scalar and its float breakdown."""
    if mu < 0 or lam < 0:
        raise ValueError(f"mu and lambda must be non-negative, got {mu}, {lam}")
    constrained = add(add(l3, l4), omega_reg)
    total = add(add(l1, scalar_mul(l2, mu)), scalar_mul(constrained, lam))
    breakdown = LossBreakdown(
        l1=l1.item(),
        l2=l2.item(),
        l3=l3.item(),
        l4=l4.item(),
        omega_reg=omega_reg.item(),
        mu=mu,
        lam=lam,
        total=total.item(),
    )
    return total, breakdown
