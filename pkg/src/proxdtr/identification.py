"""Closed-form proxy identification of counterfactual outcome densities.

Stage tables are conditional probability matrices of observed variables;
chaining them through (pseudo)inverses yields the counterfactual joint of
(Y1(a1), ..., YK(a1..aK)) given Y0 without touching the latent confounders.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .categorical import JointTable, cond_stack, exact_joint, marginalize
from .oracle import CounterfactualJoint
from .roles import ProximalRoles

COND_LIMIT = 1e12
PINV_RCOND = 1e-10
MODES = ("inverse", "pinv")


class IdentificationError(ValueError):
    pass


class CellEmptyError(IdentificationError):
    """A conditioning cell of a stage table has no mass."""


class SingularityError(IdentificationError):
    pass


@dataclass
class IdDiagnostics:
    """Conditioning of every inverted matrix plus sanity of the result."""

    condition: dict[tuple[int, tuple[int, ...]], float] = field(default_factory=dict)
    min_sv: dict[tuple[int, tuple[int, ...]], float] = field(default_factory=dict)
    out_of_range: int = 0
    normalization_error: float = 0.0
    filled_columns: int = 0

    @property
    def worst_condition(self) -> float:
        return max(self.condition.values(), default=1.0)

    @property
    def smallest_sv(self) -> float:
        return min(self.min_sv.values(), default=np.inf)

    def to_dict(self) -> dict:
        return {
            "worst_condition": self.worst_condition,
            "smallest_singular_value": self.smallest_sv,
            "out_of_range": self.out_of_range,
            "normalization_error": self.normalization_error,
            "filled_columns": self.filled_columns,
            "matrices": [
                {"stage": k, "context": list(ctx), "condition": c, "min_sv": self.min_sv[(k, ctx)]}
                for (k, ctx), c in sorted(self.condition.items())
            ],
        }


@dataclass(frozen=True)
class StageTables:
    """Observed-data matrices for every stage k = 1..K.

    Stage-k contexts enumerate (y0..y_{k-1}, a1..ak), last fastest.

    - ``R[k]``: P(y_k | Z̄_k, ctx), shape (ctx, |Y_k|, |Z̄_k|)
    - ``M[k]``: P(W̄_k | Z̄_k, ctx), shape (ctx, |W̄_k|, |Z̄_k|)
    - ``N[k]`` (k < K): P(W̄_{k+1}, y_k | Z̄_k, ctx), shape (ctx, |Y_k|, |W̄_{k+1}|, |Z̄_k|)
    - ``v``: P(W1 | y0), shape (|Y0|, |W1|)
    """

    K: int
    cards: dict[str, int]
    R: dict[int, np.ndarray]
    M: dict[int, np.ndarray]
    N: dict[int, np.ndarray]
    v: np.ndarray
    filled_columns: int = 0

    @property
    def roles(self) -> ProximalRoles:
        return ProximalRoles(self.K)

    def context_vars(self, k: int) -> list[str]:
        r = self.roles
        return r.Ys(k - 1) + r.As(k)

    def context_shape(self, k: int) -> tuple[int, ...]:
        return tuple(self.cards[n] for n in self.context_vars(k))

    def context_index(self, k: int, ys: tuple[int, ...], as_: tuple[int, ...]) -> int:
        """Flat stage-k context for outcomes (y0..y_{k-1}) and treatments (a1..ak)."""
        return int(np.ravel_multi_index(tuple(ys[:k]) + tuple(as_[:k]), self.context_shape(k)))


class IdInputsK2(StageTables):
    """Two-stage tables with the matrices addressed by their roles.

    Stage-two arrays are indexed [y0, y1, a1, a2, row, col]; stage-one
    arrays [y0, a1, row, col].
    """

    def _s2(self, arr):
        return arr.reshape(self.context_shape(2) + arr.shape[1:])

    def _s1(self, arr):
        return arr.reshape(self.context_shape(1) + arr.shape[1:])

    @property
    def R_y2(self):
        return self._s2(self.R[2])

    @property
    def M_WZ(self):
        return self._s2(self.M[2])

    @property
    def M_Wy1Z1(self):
        return self._s1(self.N[1])

    @property
    def M_W1Z1(self):
        return self._s1(self.M[1])

    @property
    def R_y1(self):
        return self._s1(self.R[1])

    @property
    def v_W1(self):
        return self.v


def _as_joint(source) -> JointTable:
    if isinstance(source, JointTable):
        return source
    if hasattr(source, "joint"):
        return source.joint()
    raise TypeError(f"cannot read probabilities from {type(source).__name__}")


def _describe_cell(names: list[str], cards: list[int], flat: int) -> str:
    cell = np.unravel_index(flat, cards)
    return ", ".join(f"{n}={int(s)}" for n, s in zip(names, cell))


def build_stage_tables(source, K: int = 2, on_empty: str = "fail") -> StageTables:
    """Assemble every stage matrix from a probability table over the observed variables.

    ``on_empty='fail'`` raises :class:`CellEmptyError` naming the first empty
    conditioning cell; ``'uniform'`` fills such columns with a uniform column.
    """
    if on_empty not in ("fail", "uniform"):
        raise ValueError(f"on_empty must be 'fail' or 'uniform', got {on_empty!r}")
    joint = _as_joint(source)
    roles = ProximalRoles(K)
    observed = roles.observed()
    for n in observed:
        joint.axis(n)
    cards = {n: joint.card(n) for n in observed}
    filled = 0

    def settle(entries, mass, ctx_names, given_names):
        nonlocal filled
        empty = ~(mass > 0)
        if not empty.any():
            return entries
        if on_empty == "fail":
            c, g = np.argwhere(empty)[0]
            names = ctx_names + given_names
            flat = int(c) * mass.shape[1] + int(g)
            raise CellEmptyError(
                "empty conditioning cell " + _describe_cell(names, [cards[n] for n in names], flat)
            )
        filled += int(empty.sum())
        rows = entries.shape[1]
        return np.where(empty[:, None, :], 1.0 / rows, entries)

    R, M, N = {}, {}, {}
    for k in range(1, K + 1):
        ctx = roles.Ys(k - 1) + roles.As(k)
        zs = roles.Zs(k)
        r, mass = cond_stack(joint, [roles.Y(k)], zs, ctx)
        R[k] = settle(r, mass, ctx, zs)
        m, mass = cond_stack(joint, roles.Ws(k), zs, ctx)
        M[k] = settle(m, mass, ctx, zs)
        if k < K:
            n, mass = cond_stack(joint, [roles.Y(k)] + roles.Ws(k + 1), zs, ctx)
            n = settle(n, mass, ctx, zs)
            N[k] = n.reshape(n.shape[0], cards[roles.Y(k)], -1, n.shape[-1])
    v, mass = cond_stack(joint, [roles.W(1)], [roles.Y(0)])
    v = settle(v, mass, [], [roles.Y(0)])[0].T
    cls = IdInputsK2 if K == 2 else StageTables
    # filled columns of R, M, N share one mass, so count each stage once
    return cls(K, cards, R, M, N, v, filled)


def build_id_inputs(source, on_empty: str = "fail") -> IdInputsK2:
    return build_stage_tables(source, 2, on_empty)


def invert(matrix: np.ndarray, mode: str, where: str = "") -> tuple[np.ndarray, float, float]:
    """(inverse, condition number, smallest singular value) under the singularity policy."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    s = np.linalg.svd(matrix, compute_uv=False)
    smin = float(s[-1]) if s.size else 0.0
    cond = float(s[0] / smin) if smin > 0 else np.inf
    if mode == "inverse":
        if matrix.shape[0] != matrix.shape[1]:
            raise ValueError(f"inverse mode needs a square matrix{where}, got {matrix.shape}")
        if not cond <= COND_LIMIT:
            raise SingularityError(f"singular matrix{where}: condition number {cond:.3e}")
        return np.linalg.inv(matrix), cond, smin
    return np.linalg.pinv(matrix, rcond=PINV_RCOND), cond, smin


def _inverses(tables: StageTables, mode: str, diag: IdDiagnostics) -> dict[int, np.ndarray]:
    out = {}
    for k in range(1, tables.K + 1):
        stack = tables.M[k]
        inv = np.empty((stack.shape[0], stack.shape[2], stack.shape[1]))
        shape = tables.context_shape(k)
        for c in range(stack.shape[0]):
            ctx = tuple(int(i) for i in np.unravel_index(c, shape))
            labels = ", ".join(f"{n}={s}" for n, s in zip(tables.context_vars(k), ctx))
            inv[c], cond, smin = invert(stack[c], mode, f" at stage {k} ({labels})")
            diag.condition[(k, ctx)] = cond
            diag.min_sv[(k, ctx)] = smin
        out[k] = inv
    return out


def _bridge_chain(tables: StageTables, inv, top: int, ys, as_) -> list[np.ndarray]:
    """Bridges h_{top,top}, ..., h_{top,1} for one outcome and treatment history."""
    c = tables.context_index(top, ys, as_)
    h = tables.R[top][c, ys[top]] @ inv[top][c]
    chain = [h]
    for k in range(top - 1, 0, -1):
        c = tables.context_index(k, ys, as_)
        h = (h @ tables.N[k][c, ys[k]]) @ inv[k][c]
        chain.append(h)
    return chain


def _levels(tables: StageTables, inv) -> dict[int, np.ndarray]:
    cards, roles = tables.cards, tables.roles
    levels = {}
    for top in range(1, tables.K + 1):
        y_cards = [cards[n] for n in roles.Ys(top)]
        a_cards = [cards[n] for n in roles.As(top)]
        out = np.empty([y_cards[0]] + a_cards + y_cards[1:])
        for as_ in itertools.product(*[range(c) for c in a_cards]):
            for ys in itertools.product(*[range(c) for c in y_cards]):
                h = _bridge_chain(tables, inv, top, ys, as_)[-1]
                out[(ys[0],) + as_ + ys[1:]] = h @ tables.v[ys[0]]
        levels[top] = out
    return levels


def identify_general_k(
    tables: StageTables, mode: str = "inverse"
) -> tuple[dict[int, np.ndarray], IdDiagnostics]:
    """Densities of (Y1(a1), ..., Yk(a1..ak)) given y0 for every k.

    Each level's array has axes (y0, a1..ak, y1..yk).
    """
    if tables.K < 1:
        raise ValueError("need at least one stage")
    diag = IdDiagnostics(filled_columns=tables.filled_columns)
    inv = _inverses(tables, mode, diag)
    levels = _levels(tables, inv)
    K = tables.K
    top = levels[K]
    diag.out_of_range = int(sum(((a < 0) | (a > 1)).sum() for a in levels.values()))
    y_axes = tuple(range(1 + K, 1 + 2 * K))
    diag.normalization_error = float(np.abs(top.sum(axis=y_axes) - 1.0).max())
    return levels, diag


def clip_renormalize(cf: CounterfactualJoint) -> CounterfactualJoint:
    """Project an estimated joint back onto densities; the marginal follows."""
    joint = np.clip(cf.joint, 0.0, None)
    total = joint.sum(axis=(3, 4), keepdims=True)
    joint = np.where(total > 0, joint / np.where(total > 0, total, 1.0), 1.0 / joint[0, 0, 0].size)
    marginal = joint[:, :, 0].sum(axis=-1)
    return CounterfactualJoint(joint, marginal, cf.provenance + "+clip", cf.diagnostics)


def identify_k2(inputs: StageTables, mode: str = "inverse", clip: bool = False) -> CounterfactualJoint:
    """Two-stage counterfactual joint from the proxy matrices; diagnostics ride along."""
    if inputs.K != 2:
        raise ValueError(f"expected two-stage tables, got K={inputs.K}")
    levels, diag = identify_general_k(inputs, mode)
    cf = CounterfactualJoint(levels[2], levels[1], "proxy", diag)
    return clip_renormalize(cf) if clip else cf


@dataclass(frozen=True)
class Bridges:
    """Row vectors over W̄ states.

    ``h22[y0, y1, a1, a2, y2]`` over W̄2, ``h21[y0, a1, a2, y1, y2]`` over W1,
    ``h11[y0, a1, y1]`` over W1.
    """

    h22: np.ndarray
    h21: np.ndarray
    h11: np.ndarray


def extract_bridges(inputs: StageTables, mode: str = "inverse") -> Bridges:
    if inputs.K != 2:
        raise ValueError("bridges are extracted for two-stage tables")
    diag = IdDiagnostics()
    inv = _inverses(inputs, mode, diag)
    c = inputs.cards
    ny0, na1, ny1, na2, ny2 = c["Y0"], c["A1"], c["Y1"], c["A2"], c["Y2"]
    nw2 = inputs.M[2].shape[1]
    nw1 = inputs.M[1].shape[1]
    h22 = np.empty((ny0, ny1, na1, na2, ny2, nw2))
    h21 = np.empty((ny0, na1, na2, ny1, ny2, nw1))
    h11 = np.empty((ny0, na1, ny1, nw1))
    for y0, a1, a2, y1, y2 in itertools.product(*map(range, (ny0, na1, na2, ny1, ny2))):
        top, low = _bridge_chain(inputs, inv, 2, (y0, y1, y2), (a1, a2))
        h22[y0, y1, a1, a2, y2] = top
        h21[y0, a1, a2, y1, y2] = low
    for y0, a1, y1 in itertools.product(range(ny0), range(na1), range(ny1)):
        (h11[y0, a1, y1],) = _bridge_chain(inputs, inv, 1, (y0, y1), (a1,))
    return Bridges(h22, h21, h11)


def population_tables(net, K: int | None = None) -> StageTables:
    """Stage tables from the exact observed-variable marginal of a net."""
    roles = ProximalRoles(K or max(int(n[1:]) for n in net.names if n.startswith("A")))
    joint = marginalize(exact_joint(net), roles.observed())
    return build_stage_tables(joint, roles.K)

