"""Ancestral and interventional sampling, plus random proximal models."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .categorical import (
    CategoricalNet,
    Cpt,
    Variable,
    _require_valid,
    exact_joint,
    states,
)
from .assumptions import min_completeness_sv
from .roles import ProximalRoles

# rows per independently keyed RNG block
BLOCK_ROWS = 65536


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class Dataset:
    variables: tuple[str, ...]
    rows: np.ndarray
    lineage: tuple[int, ...] = ()
    cards: tuple[int, ...] = ()

    def __post_init__(self):
        rows = np.asarray(self.rows)
        if rows.ndim != 2 or rows.shape[1] != len(self.variables):
            rows = rows.reshape(-1, len(self.variables))
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "variables", tuple(self.variables))

    @property
    def n(self) -> int:
        return int(self.rows.shape[0])

    def column(self, name: str) -> np.ndarray:
        return self.rows[:, self.variables.index(name)]

    def select(self, names: Sequence[str]) -> "Dataset":
        idx = [self.variables.index(n) for n in names]
        cards = tuple(self.cards[i] for i in idx) if self.cards else ()
        return Dataset(tuple(names), self.rows[:, idx], self.lineage, cards)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(self.variables)
            writer.writerows(self.rows.tolist())

    @classmethod
    def from_csv(cls, path: str | Path) -> "Dataset":
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = [[int(x) for x in line] for line in reader if line]
        arr = np.array(rows, dtype=np.int64).reshape(-1, len(header))
        return cls(tuple(header), arr)


def _lineage(seed) -> tuple[int, ...]:
    if isinstance(seed, (int, np.integer)) and not isinstance(seed, bool):
        seed = (int(seed),)
    try:
        lineage = tuple(seed)
    except TypeError:
        raise ValueError(f"invalid seed {seed!r}") from None
    if not lineage:
        raise ValueError("seed lineage must be nonempty")
    for part in lineage:
        if isinstance(part, bool) or not isinstance(part, (int, np.integer)) or part < 0:
            raise ValueError(f"invalid seed component {part!r}")
    return tuple(int(p) for p in lineage)


def _block_uniforms(lineage: tuple[int, ...], block: int, rows: int, width: int) -> np.ndarray:
    ss = np.random.SeedSequence(list(lineage) + [block])
    return np.random.Generator(np.random.Philox(ss)).random((rows, width))


def _draw(net: CategoricalNet, n: int, lineage: tuple[int, ...]) -> np.ndarray:
    names = net.names
    out = np.zeros((n, len(names)), dtype=np.int8 if max(net.card(v) for v in names) < 128 else np.int64)
    for start in range(0, n, BLOCK_ROWS):
        stop = min(n, start + BLOCK_ROWS)
        u = _block_uniforms(lineage, start // BLOCK_ROWS, stop - start, len(names))
        chunk = out[start:stop]
        for j, name in enumerate(names):
            cpt = net.cpts[name]
            idx = np.zeros(stop - start, dtype=np.int64)
            for p in cpt.parents:
                idx = idx * net.card(p) + chunk[:, names.index(p)]
            cum = np.cumsum(cpt.table, axis=1)[idx]
            cum[:, -1] = np.inf
            chunk[:, j] = (u[:, j][:, None] >= cum).sum(axis=1)
    return out


def sample(
    net: CategoricalNet,
    n: int,
    seed,
    observe_latent: bool = False,
) -> Dataset:
    """``n`` ancestral draws keyed by the seed lineage (master, iteration, ...).

    Rows are generated in fixed-size blocks, each with its own counter-based
    stream, so any partition of the blocks across workers reproduces the
    same dataset.
    """
    lineage = _lineage(seed)
    _require_valid(net)
    if n < 0:
        raise ValueError("n must be nonnegative")
    rows = _draw(net, int(n), lineage)
    keep = [i for i, v in enumerate(net.variables) if observe_latent or not v.latent]
    names = tuple(net.names[i] for i in keep)
    cards = tuple(net.variables[i].cardinality for i in keep)
    return Dataset(names, rows[:, keep], lineage, cards)


def mutilate(net: CategoricalNet, intervention: Mapping[str, int]) -> CategoricalNet:
    """Replace intervened CPTs by point masses with no parents."""
    new = {}
    for name, state in intervention.items():
        card = net.card(name)
        if not 0 <= int(state) < card:
            raise ValueError(f"state {state} invalid for {name!r}")
        table = np.zeros((1, card))
        table[0, int(state)] = 1.0
        new[name] = Cpt(name, (), table)
    return net.replace_cpts(new)


def sample_do(
    net: CategoricalNet,
    intervention: Mapping[str, int],
    n: int,
    seed,
    observe_latent: bool = False,
) -> Dataset:
    for name in intervention:
        net.var(name)
    return sample(mutilate(net, intervention), n, seed, observe_latent)


# -- random proximal models ---------------------------------------------------


@dataclass(frozen=True)
class ProximalTemplate:
    """Allowed-edge pattern for a K-period proximal DAG.

    Z only feeds later Z and A; A never feeds the same-period W; W and Z never
    touch. Every other temporally ordered edge is present.
    """

    K: int = 2
    card_U: int = 2
    card_Y: int = 2
    card_Z: int = 2
    card_W: int = 2
    card_A: int = 2

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")

    @property
    def roles(self) -> ProximalRoles:
        return ProximalRoles(self.K)

    def card(self, name: str) -> int:
        return getattr(self, f"card_{name[0]}")

    def parents(self, name: str) -> list[str]:
        r = self.roles
        family, t = name[0], int(name[1:])
        Us = lambda upto: r.Us(upto) if upto >= 0 else []  # noqa: E731
        Ys = lambda upto: r.Ys(upto) if upto >= 0 else []  # noqa: E731
        if family == "U" and t == 0:
            return []
        if family == "Y" and t == 0:
            return [r.U(0)]
        if family == "Z":
            return Us(t - 1) + Ys(t - 1) + r.Zs(t - 1) + r.As(t - 1)
        if family == "A":
            return Us(t - 1) + Ys(t - 1) + r.Zs(t) + r.As(t - 1)
        if family == "W":
            return Us(t - 1) + Ys(t - 1) + r.Ws(t - 1) + r.As(t - 1)
        if family == "U":
            return Us(t - 1) + Ys(t - 1) + r.Ws(t) + r.As(t)
        if family == "Y":
            return Us(t - 1) + Ys(t - 1) + r.Ws(t) + r.As(t)
        raise KeyError(name)

    def edges(self) -> list[tuple[str, str]]:
        return [(p, c) for c in self.roles.order() for p in self.parents(c)]

    def forbidden_edges(self) -> list[tuple[str, str]]:
        """Edges of the pattern that break the proxy structure (should be empty)."""
        bad = []
        for p, c in self.edges():
            fp, fc = p[0], c[0]
            tp, tc = int(p[1:]), int(c[1:])
            if fp == "A" and fc == "W" and tp == tc:
                bad.append((p, c))
            if fp == "Z" and fc in "YUW":
                bad.append((p, c))
            if fp == "W" and fc in "ZA":
                bad.append((p, c))
        return bad

    def skeleton(self) -> tuple[tuple[Variable, ...], dict[str, tuple[str, ...]]]:
        order = self.roles.order()
        variables = tuple(Variable(n, self.card(n), n.startswith("U")) for n in order)
        return variables, {n: tuple(self.parents(n)) for n in order}


def random_cpts(
    template: ProximalTemplate,
    rng: np.random.Generator,
    concentration: float = 1.0,
    proxy_strength: float = 0.8,
    flatten: float = 0.5,
) -> CategoricalNet:
    """Symmetric Dirichlet rows, then pulled toward a proxy-friendly shape.

    Rows of Z_t and W_t are mixed with a point mass at the state of U_{t-1}
    (weight ``proxy_strength``); rows of U, A and Y are mixed with the uniform
    row (weight ``flatten``). Both weights at 0 give plain Dirichlet rows.
    """
    variables, parents = template.skeleton()
    cards = {v.name: v.cardinality for v in variables}
    cpts = {}
    for v in variables:
        ps = parents[v.name]
        parent_states = states([cards[p] for p in ps])
        table = rng.dirichlet(np.full(v.cardinality, concentration), size=len(parent_states))
        family, t = v.name[0], int(v.name[1:])
        if family in "ZW" and proxy_strength > 0:
            u = ps.index(f"U{t - 1}")
            anchor = np.eye(v.cardinality)[parent_states[:, u] % v.cardinality]
            table = (1 - proxy_strength) * table + proxy_strength * anchor
        elif family in "UAY" and flatten > 0:
            table = (1 - flatten) * table + flatten / v.cardinality
        cpts[v.name] = Cpt(v.name, ps, table)
    return CategoricalNet(variables, cpts)


def random_proximal_net(
    template: ProximalTemplate,
    seed,
    min_sv: float = 0.05,
    max_tries: int = 10_000,
    concentration: float = 1.0,
    proxy_strength: float = 0.8,
    flatten: float = 0.5,
) -> CategoricalNet:
    """Random CPTs, redrawn until every completeness matrix clears ``min_sv``."""
    lineage = _lineage(seed)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(list(lineage))))
    best = -np.inf
    for _ in range(max_tries):
        net = random_cpts(template, rng, concentration, proxy_strength, flatten)
        if min_sv <= 0:
            return net
        sv = min_completeness_sv(exact_joint(net), template.roles)
        if sv >= min_sv:
            return net
        best = max(best, sv)
    raise GenerationError(
        f"no net with min singular value >= {min_sv} after {max_tries} tries "
        f"(largest minimum seen {best:.4g})"
    )
