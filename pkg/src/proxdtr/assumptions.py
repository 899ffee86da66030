"""Numeric checks of the latent randomization and completeness conditions."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .categorical import (
    CategoricalNet,
    JointTable,
    cond_stack,
    exact_joint,
    marginalize,
    swig_joint,
)
from .roles import ProximalRoles


@dataclass(frozen=True)
class CiCheck:
    label: str
    deviation: float


@dataclass(frozen=True)
class RankCheck:
    label: str
    t: int
    context: tuple[int, ...]
    singular_value: float
    defined: bool = True


@dataclass
class AssumptionReport:
    ci: list[CiCheck] = field(default_factory=list)
    rank: list[RankCheck] = field(default_factory=list)

    @property
    def max_ci_deviation(self) -> float:
        return max((c.deviation for c in self.ci), default=0.0)

    @property
    def min_singular_value(self) -> float:
        return min((r.singular_value for r in self.rank), default=np.inf)

    def ok(self, ci_tol: float = 1e-10, sv_floor: float = 0.0) -> bool:
        return self.max_ci_deviation < ci_tol and self.min_singular_value > sv_floor


def ci_deviation(
    joint: JointTable, xs: list[str], ys: list[str], given: list[str]
) -> float:
    """max over cells of |P(x, y | c) - P(x | c) P(y | c)| on cells with P(c) > 0."""
    size = lambda names: int(np.prod([joint.card(n) for n in names], dtype=np.int64))  # noqa: E731
    p = marginalize(joint, given + xs + ys).probs.reshape(size(given), size(xs), size(ys))
    pc = p.sum(axis=(1, 2))
    live = pc > 0
    if not live.any():
        return 0.0
    p = p[live] / pc[live, None, None]
    px = p.sum(axis=2, keepdims=True)
    py = p.sum(axis=1, keepdims=True)
    return float(np.abs(p - px * py).max())


def _ci_checks(net: CategoricalNet, roles: ProximalRoles) -> list[CiCheck]:
    K = roles.K
    a_cards = [net.card(a) for a in roles.As(K)]
    out = []
    # treatment-independence statements, one per time point, latest first
    for k in range(K, 0, -1):
        xs = roles.Ys(K)[k:] + roles.Ws(k)
        ys = [roles.A(k)] + roles.Zs(k)
        given = roles.Us(k - 1) + roles.Ys(k - 1)
        worst = 0.0
        for abar in itertools.product(*[range(c) for c in a_cards]):
            intervention = dict(zip(roles.As(K), abar))
            sw = swig_joint(net, intervention)
            ctx = {roles.A(j): abar[j - 1] for j in range(1, k)}
            if ctx:
                sl = tuple(ctx.get(n, slice(None)) for n in sw.names)
                kept = [v for v in sw.variables if v.name not in ctx]
                sw = JointTable(kept, sw.probs[sl])
            worst = max(worst, ci_deviation(sw, xs, ys, given))
        out.append(CiCheck(f"outcomes and W up to {k} independent of A{k}, Z up to {k}", worst))
    obs = exact_joint(net)
    for k in range(1, K):
        xs = roles.Ws(k + 1) + [roles.Y(k)]
        ys = roles.Zs(k)
        given = roles.As(k) + roles.Us(k - 1) + roles.Ys(k - 1)
        out.append(CiCheck(f"W up to {k + 1} and Y{k} independent of Z up to {k}", ci_deviation(obs, xs, ys, given)))
    return out


def completeness_matrices(joint: JointTable, roles: ProximalRoles, t: int):
    """Stacks of P(W̄_t | Ū_{t-1}, ctx) and P(Ū_{t-1} | Z̄_t, ctx), ctx = (ȳ_{t-1}, ā_t).

    Returns (w_given_u, u_given_z, defined) with a leading context axis.
    """
    context = roles.Ys(t - 1) + roles.As(t)
    wu, mass_u = cond_stack(joint, roles.Ws(t), roles.Us(t - 1), context)
    uz, mass_z = cond_stack(joint, roles.Us(t - 1), roles.Zs(t), context)
    defined = (mass_u > 0).all(axis=1) & (mass_z > 0).all(axis=1)
    return wu, uz, defined


def _rank_sv(stack: np.ndarray, rank: int) -> np.ndarray:
    s = np.linalg.svd(stack, compute_uv=False)
    if s.shape[-1] < rank:
        return np.zeros(stack.shape[0])
    return s[:, rank - 1]


def _rank_checks(joint: JointTable, roles: ProximalRoles) -> list[RankCheck]:
    out = []
    for t in range(1, roles.K + 1):
        u_states = int(np.prod([joint.card(u) for u in roles.Us(t - 1)]))
        ctx_cards = [joint.card(n) for n in roles.Ys(t - 1) + roles.As(t)]
        wu, uz, defined = completeness_matrices(joint, roles, t)
        sv_w = _rank_sv(wu, u_states)
        sv_u = _rank_sv(uz, u_states)
        for i, ctx in enumerate(itertools.product(*[range(c) for c in ctx_cards])):
            ok = bool(defined[i])
            out.append(RankCheck(f"W{t}|U{t - 1}", t, ctx, float(sv_w[i]) if ok else 0.0, ok))
            out.append(RankCheck(f"U{t - 1}|Z{t}", t, ctx, float(sv_u[i]) if ok else 0.0, ok))
    return out


def min_completeness_sv(joint: JointTable, roles: ProximalRoles) -> float:
    """Smallest rank-relevant singular value over all completeness matrices."""
    best = np.inf
    for t in range(1, roles.K + 1):
        u_states = int(np.prod([joint.card(u) for u in roles.Us(t - 1)]))
        wu, uz, defined = completeness_matrices(joint, roles, t)
        if not defined.all():
            return 0.0
        best = min(best, _rank_sv(wu, u_states).min(), _rank_sv(uz, u_states).min())
    return float(best)


def check_assumptions(net: CategoricalNet, roles: ProximalRoles | None = None) -> AssumptionReport:
    """Conditional-independence deviations and completeness singular values.

    Singular values are the |Ū|-th largest of each matrix, which is the
    smallest one in the square case and the rank margin otherwise.
    """
    roles = roles or _infer_roles(net)
    return AssumptionReport(_ci_checks(net, roles), _rank_checks(exact_joint(net), roles))


def _infer_roles(net: CategoricalNet) -> ProximalRoles:
    K = max(int(n[1:]) for n in net.names if n.startswith("A"))
    return ProximalRoles(K)
