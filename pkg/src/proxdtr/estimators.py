"""Plug-in regime estimators: proxy, no-unmeasured-confounding, latent oracle."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .categorical import JointTable, Variable, cond_stack
from .identification import CellEmptyError, IdDiagnostics, build_id_inputs, identify_k2
from .loglinear import LogLinearFit, fit_loglinear
from .oracle import CounterfactualJoint, Regime, counterfactual_joint_gformula, optimal_regime
from .simulator import Dataset


@dataclass(frozen=True)
class ContingencyTable:
    """Cell counts with an optional symmetric pseudo-count ``alpha``."""

    variables: tuple[Variable, ...]
    counts: np.ndarray
    alpha: float = 0.0

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        shape = tuple(v.cardinality for v in self.variables)
        counts = counts.reshape(shape)
        if (counts < 0).any():
            raise ValueError("counts must be nonnegative")
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "variables", tuple(self.variables))

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(v.name for v in self.variables)

    def joint(self) -> JointTable:
        total = self.n + self.alpha * self.counts.size
        if total == 0:
            return JointTable(self.variables, np.zeros(self.counts.shape))
        return JointTable(self.variables, (self.counts + self.alpha) / total)


def fit_contingency(data: Dataset, alpha: float = 0.0, cards=None) -> ContingencyTable:
    """Count every joint state; cardinalities come from the dataset unless given."""
    if cards is None:
        cards = data.cards or tuple(
            max(2, int(data.rows[:, j].max()) + 1) if data.n else 2 for j in range(len(data.variables))
        )
    cards = tuple(int(c) for c in cards)
    if data.n:
        if (data.rows.max(axis=0) >= np.array(cards)).any():
            raise ValueError("state exceeds its variable's cardinality")
        flat = np.ravel_multi_index(tuple(data.rows.T.astype(np.int64)), cards)
        counts = np.bincount(flat, minlength=int(np.prod(cards)))
    else:
        counts = np.zeros(int(np.prod(cards)), dtype=np.int64)
    variables = tuple(Variable(n, c) for n, c in zip(data.variables, cards))
    return ContingencyTable(variables, counts, alpha)


def _joint_of(source) -> JointTable:
    if isinstance(source, JointTable):
        return source
    return source.joint()


@dataclass(frozen=True)
class Estimate:
    regime: Regime
    joint: CounterfactualJoint
    diagnostics: IdDiagnostics | None = None


def estimate_proxy(source, mode: str = "inverse", on_empty: str = "fail") -> Estimate:
    """Proxy plug-in: identified joint from the observed table, then backward induction."""
    cf = identify_k2(build_id_inputs(_joint_of(source), on_empty), mode)
    regime, _ = optimal_regime(cf)
    return Estimate(regime, cf, cf.diagnostics)


def nuca_joint(source, on_empty: str = "fail") -> CounterfactualJoint:
    """Joint implied by treating observed history as sufficient for confounding."""
    joint = _joint_of(source)
    stage2, mass2 = cond_stack(joint, ["Y2"], [], ["Y0", "A1", "Y1", "A2"])
    stage1, mass1 = cond_stack(joint, ["Y1"], [], ["Y0", "A1"])
    for mass, names in ((mass2, ["Y0", "A1", "Y1", "A2"]), (mass1, ["Y0", "A1"])):
        empty = ~(mass[:, 0] > 0)
        if empty.any():
            if on_empty == "fail":
                cell = np.unravel_index(int(np.argmax(empty)), [joint.card(n) for n in names])
                raise CellEmptyError(
                    "empty conditioning cell " + ", ".join(f"{n}={int(s)}" for n, s in zip(names, cell))
                )
    shape2 = tuple(joint.card(n) for n in ("Y0", "A1", "Y1", "A2", "Y2"))
    p_y2 = stage2[:, :, 0].reshape(shape2)  # [y0, a1, y1, a2, y2]
    p_y1 = stage1[:, :, 0].reshape(shape2[:3])  # [y0, a1, y1]
    if on_empty == "uniform":
        p_y2 = np.where(p_y2.sum(-1, keepdims=True) > 0, p_y2, 1.0 / shape2[-1])
        p_y1 = np.where(p_y1.sum(-1, keepdims=True) > 0, p_y1, 1.0 / shape2[2])
    cf = np.einsum("iajbk,iaj->iabjk", p_y2, p_y1)
    return CounterfactualJoint(cf, p_y1, "nuca")


def estimate_nuca(source, on_empty: str = "fail") -> Estimate:
    """d2 maximizes E[Y2 | y0, a1, y1, a2]; d1 maximizes its average over P(y1 | y0, a1)."""
    cf = nuca_joint(source, on_empty)
    regime, _ = optimal_regime(cf)
    return Estimate(regime, cf)


def estimate_oracle(source) -> Estimate:
    """Latent g-formula plug-in; the table must include U0 and U1."""
    joint = _joint_of(source)
    missing = [u for u in ("U0", "U1") if u not in joint.names]
    if missing:
        raise ValueError(f"oracle estimate needs latent columns; missing {', '.join(missing)}")
    cf = counterfactual_joint_gformula(joint, provenance="oracle-estimate")
    regime, _ = optimal_regime(cf)
    return Estimate(regime, cf)


def estimate_proxy_loglinear(table: ContingencyTable, order: int, mode: str = "inverse", on_empty: str = "fail"):
    fit = fit_loglinear(table, order)
    return estimate_proxy(fit, mode, on_empty), fit
