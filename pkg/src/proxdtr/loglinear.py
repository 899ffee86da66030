"""Hierarchical log-linear smoothing by iterative proportional fitting."""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .categorical import JointTable


@dataclass(frozen=True)
class LogLinearFit:
    order: int
    fitted: JointTable
    iterations: int
    max_discrepancy: float
    converged: bool

    def joint(self) -> JointTable:
        return self.fitted


def margin_subsets(ndim: int, order: int) -> list[tuple[int, ...]]:
    """All axis subsets of size ``order``; lower-order margins follow from these."""
    return list(itertools.combinations(range(ndim), order))


def _margin(arr: np.ndarray, keep: tuple[int, ...]) -> np.ndarray:
    drop = tuple(i for i in range(arr.ndim) if i not in keep)
    return arr.sum(axis=drop, keepdims=True)


def max_margin_discrepancy(fitted: np.ndarray, target: np.ndarray, order: int) -> float:
    """L-infinity gap over every margin of size ``order`` (probability scale)."""
    worst = 0.0
    for keep in margin_subsets(target.ndim, order):
        gap = np.abs(_margin(fitted, keep) - _margin(target, keep)).max()
        worst = max(worst, float(gap))
    return worst


def fit_loglinear(table, order: int, tol: float = 1e-8, max_iters: int = 1000) -> LogLinearFit:
    """Fit the model with all interactions up to ``order`` to a contingency table.

    Starts from the uniform table and rescales each size-``order`` margin in
    turn (subsets in lexicographic order) until every margin matches within
    ``tol`` or ``max_iters`` full cycles have run.
    """
    target_joint = table.joint() if hasattr(table, "joint") else table
    target = np.asarray(target_joint.probs, dtype=float)
    ndim = target.ndim
    if not 2 <= order <= ndim:
        raise ValueError(f"order must lie in [2, {ndim}], got {order}")
    if max_iters < 1:
        raise ValueError("max_iters must be positive")
    subsets = margin_subsets(ndim, order)
    targets = [_margin(target, keep) for keep in subsets]
    fitted = np.full(target.shape, target.sum() / target.size)
    discrepancy = np.inf
    iterations = 0
    for iterations in range(1, max_iters + 1):
        for keep, aim in zip(subsets, targets):
            current = _margin(fitted, keep)
            ratio = np.divide(aim, current, out=np.zeros_like(aim), where=current > 0)
            fitted *= ratio
        discrepancy = max(
            float(np.abs(_margin(fitted, keep) - aim).max()) for keep, aim in zip(subsets, targets)
        )
        if discrepancy < tol:
            break
    return LogLinearFit(
        order=order,
        fitted=JointTable(target_joint.variables, fitted),
        iterations=iterations,
        max_discrepancy=discrepancy,
        converged=discrepancy < tol,
    )
