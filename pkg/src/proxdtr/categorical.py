"""Exact probability machinery for small categorical networks.

Joint states of an ordered variable list are always enumerated with the
last variable varying fastest (C order), which fixes every matrix layout
in the package.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

MODEL_TOL = 1e-9
DERIVED_TOL = 1e-8
DEFAULT_CELL_CAP = 2**24


class ModelError(ValueError):
    """Raised when a model file or net is malformed."""


class CapacityError(RuntimeError):
    """Raised when an enumeration would exceed its configured cell cap."""


@dataclass(frozen=True)
class Variable:
    name: str
    cardinality: int
    latent: bool = False

    def __post_init__(self):
        if self.cardinality < 2:
            raise ModelError(f"variable {self.name!r} needs cardinality >= 2")


@dataclass(frozen=True)
class Cpt:
    """P(child | parents); rows are parent assignments, last parent fastest."""

    child: str
    parents: tuple[str, ...]
    table: np.ndarray

    def __post_init__(self):
        table = np.array(self.table, dtype=float)
        table.setflags(write=False)
        object.__setattr__(self, "parents", tuple(self.parents))
        object.__setattr__(self, "table", table)


@dataclass(frozen=True)
class CategoricalNet:
    variables: tuple[Variable, ...]
    cpts: Mapping[str, Cpt]

    def __post_init__(self):
        object.__setattr__(self, "variables", tuple(self.variables))
        object.__setattr__(self, "cpts", dict(self.cpts))

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(v.name for v in self.variables)

    def var(self, name: str) -> Variable:
        for v in self.variables:
            if v.name == name:
                return v
        raise KeyError(name)

    def card(self, name: str) -> int:
        return self.var(name).cardinality

    @property
    def observed(self) -> tuple[str, ...]:
        return tuple(v.name for v in self.variables if not v.latent)

    def replace_cpts(self, new: Mapping[str, Cpt]) -> "CategoricalNet":
        cpts = dict(self.cpts)
        cpts.update(new)
        return CategoricalNet(self.variables, cpts)


@dataclass(frozen=True)
class JointTable:
    """Dense joint distribution; ``probs`` has one axis per variable."""

    variables: tuple[Variable, ...]
    probs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "variables", tuple(self.variables))
        probs = np.asarray(self.probs, dtype=float)
        shape = tuple(v.cardinality for v in self.variables)
        if probs.shape != shape:
            probs = probs.reshape(shape)
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(v.name for v in self.variables)

    def axis(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"unknown variable {name!r}") from None

    def card(self, name: str) -> int:
        return self.variables[self.axis(name)].cardinality

    def flat(self) -> np.ndarray:
        return self.probs.ravel()


@dataclass(frozen=True)
class CondMatrix:
    """Column-stochastic P(targets | givens, context).

    ``undefined`` flags columns whose conditioning event has zero mass;
    those columns hold zeros. ``joint_row`` marks matrices such as
    P(W, y | Z, ...) whose columns sum to at most one.
    """

    targets: tuple[str, ...]
    givens: tuple[str, ...]
    context: tuple[tuple[str, int], ...]
    entries: np.ndarray
    mass: np.ndarray
    undefined: np.ndarray
    joint_row: bool = False
    fixed: tuple[tuple[str, int], ...] = field(default=())

    @property
    def any_undefined(self) -> bool:
        return bool(self.undefined.any())


# -- validation -------------------------------------------------------------


def validate_net(net: CategoricalNet, tol: float = MODEL_TOL) -> list[str]:
    """Return every violated invariant; an empty list means the net is valid."""
    problems: list[str] = []
    names = [v.name for v in net.variables]
    if len(set(names)) != len(names):
        problems.append("duplicate variable names")
    position = {n: i for i, n in enumerate(names)}
    cards = {v.name: v.cardinality for v in net.variables}
    for extra in sorted(set(net.cpts) - set(names)):
        problems.append(f"cpt for unknown variable {extra!r}")
    for i, name in enumerate(names):
        cpt = net.cpts.get(name)
        if cpt is None:
            problems.append(f"missing cpt for {name!r}")
            continue
        bad_parent = False
        for p in cpt.parents:
            if p not in position:
                problems.append(f"{name!r} has unknown parent {p!r}")
                bad_parent = True
            elif position[p] >= i:
                problems.append(
                    f"acyclicity: parent {p!r} of {name!r} does not precede it in topological order"
                )
                bad_parent = True
        if bad_parent:
            continue
        rows = int(np.prod([cards[p] for p in cpt.parents], dtype=np.int64))
        if cpt.table.shape != (rows, cards[name]):
            problems.append(
                f"cpt {name!r} has shape {cpt.table.shape}, expected {(rows, cards[name])}"
            )
            continue
        if (cpt.table < 0).any():
            problems.append(f"cpt {name!r} has negative entries")
        sums = cpt.table.sum(axis=1)
        for r in np.flatnonzero(np.abs(sums - 1.0) > tol):
            problems.append(f"row-sum: cpt {name!r} row {r} sums to {sums[r]:.12g}")
    return problems


def _require_valid(net: CategoricalNet) -> None:
    problems = validate_net(net)
    if problems:
        raise ModelError("; ".join(problems))


# -- enumeration ------------------------------------------------------------


def _factor(net: CategoricalNet, name: str, fixed_parents: Mapping[str, int] | None = None):
    """CPT of ``name`` as an array broadcastable over the full state space."""
    cpt = net.cpts[name]
    names = net.names
    shape = [net.card(p) for p in cpt.parents] + [net.card(name)]
    table = cpt.table.reshape(shape)
    parents = list(cpt.parents)
    if fixed_parents:
        index = tuple(
            fixed_parents[p] if p in fixed_parents else slice(None) for p in parents
        ) + (slice(None),)
        table = table[index]
        parents = [p for p in parents if p not in fixed_parents]
    axes = parents + [name]
    order = sorted(range(len(axes)), key=lambda k: names.index(axes[k]))
    table = np.transpose(table, order)
    sorted_axes = [axes[k] for k in order]
    full = [1] * len(names)
    for ax in sorted_axes:
        full[names.index(ax)] = net.card(ax)
    return table.reshape(full)


def _check_capacity(net: CategoricalNet, cap: int) -> None:
    cells = int(np.prod([v.cardinality for v in net.variables], dtype=object))
    if cells > cap:
        raise CapacityError(f"state space has {cells} cells, above cap {cap}")


def exact_joint(net: CategoricalNet, cap: int = DEFAULT_CELL_CAP) -> JointTable:
    """Chain-rule product of all CPTs over the full state space."""
    _require_valid(net)
    _check_capacity(net, cap)
    probs = np.ones([1] * len(net.variables))
    for name in net.names:
        probs = probs * _factor(net, name)
    return JointTable(net.variables, probs)


def swig_joint(
    net: CategoricalNet, intervention: Mapping[str, int], cap: int = DEFAULT_CELL_CAP
) -> JointTable:
    """Single-world joint: intervened values feed children, natural values stay random.

    Each non-intervened variable is its potential outcome under the
    intervention; intervened variables keep their natural CPT (evaluated at
    the intervened values of earlier treatments).
    """
    _require_valid(net)
    _check_capacity(net, cap)
    for k in intervention:
        net.var(k)
    probs = np.ones([1] * len(net.variables))
    for name in net.names:
        probs = probs * _factor(net, name, fixed_parents=intervention)
    return JointTable(net.variables, probs)


def marginalize(joint: JointTable, keep: Sequence[str]) -> JointTable:
    """Sum out everything not in ``keep``; result axes follow ``keep`` order."""
    keep = list(keep)
    axes = [joint.axis(k) for k in keep]
    drop = tuple(i for i in range(len(joint.variables)) if i not in axes)
    reduced = joint.probs.sum(axis=drop) if drop else joint.probs
    remaining = [i for i in range(len(joint.variables)) if i not in drop]
    perm = [remaining.index(a) for a in axes]
    return JointTable(
        tuple(joint.variables[a] for a in axes), np.transpose(reduced, perm)
    )


def _sliced(joint: JointTable, assignment: Mapping[str, int]) -> tuple[np.ndarray, list[str]]:
    index = []
    for i, v in enumerate(joint.variables):
        if v.name in assignment:
            state = int(assignment[v.name])
            if not 0 <= state < v.cardinality:
                raise ValueError(f"state {state} invalid for {v.name!r}")
            index.append(state)
        else:
            index.append(slice(None))
    for k in assignment:
        joint.axis(k)
    rest = [v.name for v in joint.variables if v.name not in assignment]
    return joint.probs[tuple(index)], rest


def _block(arr: np.ndarray, rest: list[str], rows: list[str], cols: list[str]) -> np.ndarray:
    keep = rows + cols
    drop = tuple(i for i, n in enumerate(rest) if n not in keep)
    reduced = arr.sum(axis=drop) if drop else arr
    remaining = [n for n in rest if n in keep]
    reduced = np.transpose(reduced, [remaining.index(n) for n in keep])
    nrow = int(np.prod(reduced.shape[: len(rows)], dtype=np.int64))
    return reduced.reshape(nrow, -1)


def _check_disjoint(*groups) -> None:
    seen: set[str] = set()
    for g in groups:
        for name in g:
            if name in seen:
                raise ValueError(f"variable {name!r} appears in more than one role")
            seen.add(name)


def cond_matrix(
    joint: JointTable,
    targets: Sequence[str],
    givens: Sequence[str],
    context: Mapping[str, int] | None = None,
) -> CondMatrix:
    """Matrix of P(targets=i | givens=j, context); zero-mass columns are flagged."""
    return cond_joint_row_matrix(joint, targets, {}, givens, context)


def cond_joint_row_matrix(
    joint: JointTable,
    targets: Sequence[str],
    fixed: Mapping[str, int],
    givens: Sequence[str],
    context: Mapping[str, int] | None = None,
) -> CondMatrix:
    """Matrix of P(targets=i, fixed | givens=j, context).

    Columns sum to P(fixed | given_j, context); with an empty ``fixed`` this is
    :func:`cond_matrix`.
    """
    context = dict(context or {})
    fixed = dict(fixed)
    targets, givens = list(targets), list(givens)
    _check_disjoint(targets, givens, context, fixed)
    arr, rest = _sliced(joint, context)
    denom = _block(arr, rest, [], givens)[0]
    sub, sub_rest = _sliced(JointTable([joint.variables[joint.axis(n)] for n in rest], arr), fixed)
    numer = _block(sub, sub_rest, targets, givens)
    undefined = ~(denom > 0)
    safe = np.where(undefined, 1.0, denom)
    entries = np.where(undefined[None, :], 0.0, numer / safe[None, :])
    return CondMatrix(
        targets=tuple(targets),
        givens=tuple(givens),
        context=tuple(sorted(context.items())),
        entries=entries,
        mass=denom,
        undefined=undefined,
        joint_row=bool(fixed),
        fixed=tuple(sorted(fixed.items())),
    )


def cond_stack(
    joint: JointTable,
    targets: Sequence[str],
    givens: Sequence[str],
    context: Sequence[str] = (),
) -> tuple[np.ndarray, np.ndarray]:
    """P(targets | givens, context) for every context state at once.

    Returns ``(entries, mass)`` with shapes (contexts, |targets|, |givens|)
    and (contexts, |givens|); contexts enumerate ``context`` last-fastest.
    Columns with zero mass are all zeros.
    """
    targets, givens, context = list(targets), list(givens), list(context)
    _check_disjoint(targets, givens, context)
    m = marginalize(joint, context + targets + givens).probs
    size = lambda names: int(np.prod([joint.card(n) for n in names], dtype=np.int64))  # noqa: E731
    arr = m.reshape(size(context), size(targets), size(givens))
    mass = arr.sum(axis=1)
    safe = np.where(mass > 0, mass, 1.0)
    return arr / safe[:, None, :], mass


def states(cards: Sequence[int]) -> np.ndarray:
    """All joint states of the given cardinalities, last index fastest."""
    if not cards:
        return np.zeros((1, 0), dtype=int)
    grids = np.indices(tuple(cards)).reshape(len(cards), -1)
    return grids.T


# -- model files ------------------------------------------------------------


def net_from_dict(spec: Mapping) -> CategoricalNet:
    try:
        variables = []
        cpts = {}
        for entry in spec["variables"]:
            var = Variable(entry["name"], int(entry["card"]), bool(entry.get("latent", False)))
            variables.append(var)
            cpts[var.name] = Cpt(var.name, tuple(entry.get("parents", [])), spec["cpts"][var.name])
    except (KeyError, TypeError) as exc:
        raise ModelError(f"malformed model: {exc}") from exc
    return CategoricalNet(tuple(variables), cpts)


def net_to_dict(net: CategoricalNet) -> dict:
    return {
        "variables": [
            {
                "name": v.name,
                "card": v.cardinality,
                "latent": v.latent,
                "parents": list(net.cpts[v.name].parents),
            }
            for v in net.variables
        ],
        "cpts": {name: net.cpts[name].table.tolist() for name in net.names},
    }


def load_net(path: str | Path) -> CategoricalNet:
    with open(path, encoding="utf-8") as fh:
        return net_from_dict(json.load(fh))


def save_net(net: CategoricalNet, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(net_to_dict(net), fh, indent=1)


def paper_net() -> CategoricalNet:
    """The bundled 11-variable binary simulation model."""
    ref = resources.files("proxdtr").joinpath("data/paper_dgp.json")
    with ref.open("r", encoding="utf-8") as fh:
        return net_from_dict(json.load(fh))


def load_model(source: str) -> CategoricalNet:
    """``'paper'`` for the bundled model, otherwise a model file path."""
    if source == "paper":
        return paper_net()
    return load_net(source)
