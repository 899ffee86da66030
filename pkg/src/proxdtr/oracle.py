"""Exact ground truth: counterfactual joints, regime values and the regret spectrum."""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .categorical import (
    CategoricalNet,
    Cpt,
    JointTable,
    exact_joint,
    marginalize,
)
from .roles import K2, ProximalRoles
from .simulator import mutilate

# regrets between this and zero are floating-point noise
REGRET_FLOOR = -1e-12
SPECTRUM_CAP = 10**6


class PositivityError(ValueError):
    """A conditioning cell needed by the g-formula has zero probability."""


class CapacityExceeded(RuntimeError):
    pass


@dataclass(frozen=True)
class CounterfactualJoint:
    """Counterfactual outcome densities given baseline outcome.

    ``joint[y0, a1, a2, y1, y2]`` is P(Y2(a1,a2)=y2, Y1(a1)=y1 | y0) and
    ``marginal[y0, a1, y1]`` is P(Y1(a1)=y1 | y0).
    """

    joint: np.ndarray
    marginal: np.ndarray
    provenance: str = "oracle"
    diagnostics: object = field(default=None, compare=False)

    def __post_init__(self):
        for name in ("joint", "marginal"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def out_of_range(self) -> int:
        """Entries outside [0, 1]; only estimates can have any."""
        j, m = self.joint, self.marginal
        return int(((j < 0) | (j > 1)).sum() + ((m < 0) | (m > 1)).sum())

    def normalization_error(self) -> float:
        return float(np.abs(self.joint.sum(axis=(3, 4)) - 1.0).max())

    def consistency_error(self) -> float:
        return float(np.abs(self.joint.sum(axis=4) - self.marginal[:, :, None, :]).max())

    def to_dict(self) -> dict:
        return {
            "provenance": self.provenance,
            "axes": ["y0", "a1", "a2", "y1", "y2"],
            "joint": self.joint.tolist(),
            "marginal_axes": ["y0", "a1", "y1"],
            "marginal": self.marginal.tolist(),
        }


@dataclass(frozen=True)
class Regime:
    """Deterministic two-stage rule: ``d1[y0]`` and ``d2[y0, a1, y1]``."""

    d1: np.ndarray
    d2: np.ndarray
    unreachable: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        d1 = np.array(self.d1, dtype=np.int64)
        d2 = np.array(self.d2, dtype=np.int64)
        if d2.ndim != 3 or d1.ndim != 1 or d2.shape[0] != d1.shape[0]:
            raise ValueError(f"bad regime shapes {d1.shape}, {d2.shape}")
        for arr in (d1, d2):
            arr.setflags(write=False)
        object.__setattr__(self, "d1", d1)
        object.__setattr__(self, "d2", d2)

    def __eq__(self, other):
        if not isinstance(other, Regime):
            return NotImplemented
        return np.array_equal(self.d1, other.d1) and np.array_equal(self.d2, other.d2)

    def __hash__(self):
        return hash((self.d1.tobytes(), self.d2.tobytes()))

    def index(self, n_a1: int = 2, n_a2: int = 2) -> int:
        """Mixed-radix position: d1 digits (by y0) then d2 digits (y0, a1, y1 last fastest)."""
        idx = 0
        for digit in self.d1.ravel():
            idx = idx * n_a1 + int(digit)
        for digit in self.d2.ravel():
            idx = idx * n_a2 + int(digit)
        return idx

    @classmethod
    def from_index(cls, index: int, n_y0=2, n_a1=2, n_y1=2, n_a2=2) -> "Regime":
        n2 = n_y0 * n_a1 * n_y1
        d2 = []
        for _ in range(n2):
            index, r = divmod(index, n_a2)
            d2.append(r)
        d1 = []
        for _ in range(n_y0):
            index, r = divmod(index, n_a1)
            d1.append(r)
        if index:
            raise ValueError("regime index out of range")
        return cls(d1[::-1], np.array(d2[::-1]).reshape(n_y0, n_a1, n_y1))

    def bits(self) -> tuple[str, str]:
        return "".join(map(str, self.d1.ravel())), "".join(map(str, self.d2.ravel()))

    def to_dict(self) -> dict:
        d2 = {
            f"{y0},{a1},{y1}": int(self.d2[y0, a1, y1])
            for y0, a1, y1 in np.ndindex(*self.d2.shape)
        }
        return {"d1": {str(y0): int(a) for y0, a in enumerate(self.d1)}, "d2": d2}

    @classmethod
    def from_dict(cls, payload: dict) -> "Regime":
        d1_map = {int(k): int(v) for k, v in payload["d1"].items()}
        d2_map = {tuple(int(x) for x in k.split(",")): int(v) for k, v in payload["d2"].items()}
        n_y0 = max(d1_map) + 1
        shape = tuple(max(k[i] for k in d2_map) + 1 for i in range(3))
        if shape[0] != n_y0 or len(d1_map) != n_y0 or len(d2_map) != int(np.prod(shape)):
            raise ValueError("regime is not total over its domain")
        d2 = np.zeros(shape, dtype=np.int64)
        for k, v in d2_map.items():
            d2[k] = v
        return cls([d1_map[i] for i in range(n_y0)], d2)

    @classmethod
    def load(cls, path: str | Path) -> "Regime":
        """Read a regime file, or the ``regime`` entry of an ``estimate`` output."""
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
        if "regime" in payload and "d1" not in payload:
            payload = payload["regime"]
        return cls.from_dict(payload)


@dataclass(frozen=True)
class ValueTable:
    """``V2[y0, a1, y1]`` stage-two optimum, ``V1[y0]`` under the induced continuation."""

    V2: np.ndarray
    V1: np.ndarray
    Q2: np.ndarray
    Q1: np.ndarray


# -- g-formula ----------------------------------------------------------------


def _latent_order(roles: ProximalRoles) -> list[str]:
    order = [roles.Y(0), roles.U(0)]
    for k in range(1, roles.K + 1):
        order += [roles.A(k), roles.Y(k)]
        if k < roles.K:
            order.append(roles.U(k))
    return order


def latent_gformula(joint: JointTable, roles: ProximalRoles = K2) -> dict[int, np.ndarray]:
    """Sequential standardization over the latent confounders.

    Returns ``{k: array}`` for k = 1..K with axes (y0, a1..ak, y1..yk), each the
    density of (Y1(a1), ..., Yk(a1..ak)) given y0.
    """
    order = _latent_order(roles)
    for name in order:
        joint.axis(name)
    full = marginalize(joint, order).probs
    ndim = len(order)
    # prefix marginals P(first j variables)
    prefix = [full.sum(axis=tuple(range(j, ndim))) if j < ndim else full for j in range(ndim + 1)]
    weight = np.ones(())
    levels: dict[int, np.ndarray] = {}
    for j, name in enumerate(order):
        if name.startswith("A"):
            weight = weight[..., None] * np.ones(joint.card(name))
            continue
        if j == 0:
            # Y0 is conditioned on, never weighted
            weight = weight[..., None] * np.ones(joint.card(name))
            continue
        numer, denom = prefix[j + 1], prefix[j]
        missing = (denom <= 0) & (weight > 0)
        if missing.any():
            cell = tuple(int(i) for i in np.argwhere(missing)[0])
            raise PositivityError(
                f"P({', '.join(f'{n}={s}' for n, s in zip(order[:j], cell))}) = 0 "
                f"but is needed to condition {name}"
            )
        safe = np.where(denom > 0, denom, 1.0)
        factor = np.where((denom > 0)[..., None], numer / safe[..., None], 0.0)
        weight = weight[..., None] * factor
        if name.startswith("Y"):
            k = int(name[1:])
            names = order[: j + 1]
            u_axes = tuple(i for i, n in enumerate(names) if n.startswith("U"))
            summed = weight.sum(axis=u_axes)
            kept = [n for n in names if not n.startswith("U")]
            target = [roles.Y(0)] + roles.As(k) + roles.Ys(k)[1:]
            levels[k] = np.transpose(summed, [kept.index(n) for n in target])
    return levels


def counterfactual_joint_gformula(
    source: CategoricalNet | JointTable, provenance: str = "oracle"
) -> CounterfactualJoint:
    """Two-stage counterfactual joint from a model (or table) that includes U0, U1."""
    joint = exact_joint(source) if isinstance(source, CategoricalNet) else source
    levels = latent_gformula(joint, K2)
    return CounterfactualJoint(levels[2], levels[1], provenance)


def do_kernel(net: CategoricalNet, roles: ProximalRoles = K2) -> np.ndarray:
    """``G[a1, a2, y0, y1, y2]`` = P(Y0=y0, Y1=y1, Y2=y2) under do(A1=a1, A2=a2)."""
    a1s, a2s = net.card(roles.A(1)), net.card(roles.A(2))
    ys = [roles.Y(0), roles.Y(1), roles.Y(2)]
    out = np.zeros((a1s, a2s) + tuple(net.card(y) for y in ys))
    for a1, a2 in itertools.product(range(a1s), range(a2s)):
        j = exact_joint(mutilate(net, {roles.A(1): a1, roles.A(2): a2}))
        out[a1, a2] = marginalize(j, ys).probs
    return out


def interventional_joint(net: CategoricalNet) -> CounterfactualJoint:
    """Same densities as the g-formula, read off the mutilated networks."""
    G = do_kernel(net)
    p_y0 = G.sum(axis=(3, 4))[0, 0]
    joint = np.transpose(G, (2, 0, 1, 3, 4)) / p_y0[:, None, None, None, None]
    marginal = joint[:, :, 0].sum(axis=3)
    return CounterfactualJoint(joint, marginal, "interventional")


# -- regimes --------------------------------------------------------------------


def _outcome_values(n: int, outcome_values) -> np.ndarray:
    if outcome_values is None:
        return np.arange(n, dtype=float)
    vals = np.asarray(outcome_values, dtype=float)
    if vals.shape != (n,):
        raise ValueError(f"need {n} outcome values")
    return vals


def optimal_regime(cf: CounterfactualJoint, outcome_values=None) -> tuple[Regime, ValueTable]:
    """Backward induction on the counterfactual densities; ties go to the smaller index."""
    joint, marginal = cf.joint, cf.marginal
    y2 = _outcome_values(joint.shape[-1], outcome_values)
    numer = np.einsum("iabjk,k->iajb", joint, y2)  # (y0, a1, y1, a2)
    zero = marginal == 0
    safe = np.where(zero, 1.0, marginal)
    Q2 = np.where(zero[..., None], 0.0, numer / safe[..., None])
    d2 = np.argmax(Q2, axis=-1)
    V2 = np.take_along_axis(Q2, d2[..., None], axis=-1)[..., 0]
    Q1 = (marginal * V2).sum(axis=-1)  # (y0, a1)
    d1 = np.argmax(Q1, axis=-1)
    V1 = np.take_along_axis(Q1, d1[:, None], axis=-1)[:, 0]
    return Regime(d1, d2, unreachable=zero), ValueTable(V2, V1, Q2, Q1)


def regime_net(net: CategoricalNet, regime: Regime, roles: ProximalRoles = K2) -> CategoricalNet:
    """Replace A1, A2 by the regime's deterministic rules."""
    y0, a1, y1, a2 = roles.Y(0), roles.A(1), roles.Y(1), roles.A(2)
    n_a1, n_a2 = net.card(a1), net.card(a2)
    t1 = np.eye(n_a1)[regime.d1]
    t2 = np.eye(n_a2)[regime.d2.reshape(-1)]
    return net.replace_cpts({a1: Cpt(a1, (y0,), t1), a2: Cpt(a2, (y0, a1, y1), t2)})


def regime_value(net: CategoricalNet, regime: Regime, outcome_values=None) -> float:
    """E[Y2] when treatments follow the regime, by exact enumeration."""
    j = exact_joint(regime_net(net, regime))
    p = marginalize(j, [K2.Y(2)]).probs
    return float(p @ _outcome_values(len(p), outcome_values))


def optimal_value(net: CategoricalNet, outcome_values=None) -> float:
    regime, _ = optimal_regime(counterfactual_joint_gformula(net), outcome_values)
    return regime_value(net, regime, outcome_values)


def _clamp(r: float) -> float:
    if r < REGRET_FLOOR:
        raise ArithmeticError(f"negative regret {r:.3e}: value exceeds the optimum")
    return max(r, 0.0)


def regret(net: CategoricalNet, regime: Regime, v_opt: float | None = None) -> float:
    if v_opt is None:
        v_opt = optimal_value(net)
    return _clamp(v_opt - regime_value(net, regime))


@dataclass(frozen=True)
class Spectrum:
    """Exact value and regret of every deterministic regime, in index order."""

    values: np.ndarray
    regrets: np.ndarray
    v_opt: float
    shape: tuple[int, int, int, int]

    def __len__(self):
        return len(self.values)

    def regime(self, index: int) -> Regime:
        n_y0, n_a1, n_y1, n_a2 = self.shape
        return Regime.from_index(index, n_y0, n_a1, n_y1, n_a2)

    def regret_of(self, regime: Regime) -> float:
        return float(self.regrets[regime.index(self.shape[1], self.shape[3])])

    def distinct_regrets(self, decimals: int = 12) -> np.ndarray:
        return np.unique(np.round(self.regrets, decimals))

    def contains(self, value: float, tol: float) -> bool:
        return bool((np.abs(self.regrets - value) <= tol).any())

    def rows(self):
        for i in range(len(self)):
            d1, d2 = self.regime(i).bits()
            yield i, d1, d2, float(self.values[i]), float(self.regrets[i])

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("regime_index,d1_bits,d2_bits,value,regret\n")
            for i, d1, d2, v, r in self.rows():
                fh.write(f"{i},{d1},{d2},{v!r},{r!r}\n")


def regime_spectrum(net: CategoricalNet, cap: int = SPECTRUM_CAP, outcome_values=None) -> Spectrum:
    """Enumerate all regimes using the do-kernel, then anchor to the exact optimum."""
    n_y0, n_a1, n_y1, n_a2 = (net.card(n) for n in ("Y0", "A1", "Y1", "A2"))
    size = n_a1**n_y0 * n_a2 ** (n_y0 * n_a1 * n_y1)
    if size > cap:
        raise CapacityExceeded(f"{size} regimes exceed cap {cap}")
    G = do_kernel(net)
    y2 = _outcome_values(G.shape[-1], outcome_values)
    # EG[a1, a2, y0, y1] = sum_y2 y2 * G
    EG = G @ y2
    values = np.empty(size)
    y0s = np.arange(n_y0)[:, None]
    y1s = np.arange(n_y1)[None, :]
    for idx in range(size):
        r = Regime.from_index(idx, n_y0, n_a1, n_y1, n_a2)
        a1 = r.d1[:, None]
        a2 = r.d2[y0s, a1, y1s]
        values[idx] = EG[a1, a2, y0s, y1s].sum()
    v_opt = optimal_value(net, outcome_values)
    if values.max() - v_opt > 1e-12:
        raise ArithmeticError("enumerated value exceeds the backward-induction optimum")
    regrets = np.array([_clamp(v_opt - v) for v in values])
    return Spectrum(values, regrets, v_opt, (n_y0, n_a1, n_y1, n_a2))
