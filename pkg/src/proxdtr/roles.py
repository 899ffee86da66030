"""Naming of the proximal roles (U, Y, Z, A, W) across time points."""
from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class ProximalRoles:
    """Variable names for a K-time-point proximal model.

    ``U[t]`` for t = 0..K-1, ``Y[t]`` for t = 0..K, and ``Z[t]``, ``A[t]``,
    ``W[t]`` for t = 1..K (index 0 of those tuples is unused and ``None``).
    """

    K: int = 2

    def _name(self, family: str, t: int) -> str:
        return f"{family}{t}"

    def U(self, t: int) -> str:
        if not 0 <= t <= self.K - 1:
            raise IndexError(t)
        return self._name("U", t)

    def Y(self, t: int) -> str:
        if not 0 <= t <= self.K:
            raise IndexError(t)
        return self._name("Y", t)

    def Z(self, t: int) -> str:
        if not 1 <= t <= self.K:
            raise IndexError(t)
        return self._name("Z", t)

    def A(self, t: int) -> str:
        if not 1 <= t <= self.K:
            raise IndexError(t)
        return self._name("A", t)

    def W(self, t: int) -> str:
        if not 1 <= t <= self.K:
            raise IndexError(t)
        return self._name("W", t)

    def Us(self, upto: int) -> list[str]:
        return [self.U(t) for t in range(upto + 1)]

    def Ys(self, upto: int) -> list[str]:
        return [self.Y(t) for t in range(upto + 1)]

    def Zs(self, upto: int) -> list[str]:
        return [self.Z(t) for t in range(1, upto + 1)]

    def As(self, upto: int) -> list[str]:
        return [self.A(t) for t in range(1, upto + 1)]

    def Ws(self, upto: int) -> list[str]:
        return [self.W(t) for t in range(1, upto + 1)]

    def order(self) -> list[str]:
        """Topological order U0, Y0, Z1, A1, W1, U1, Y1, ..., ZK, AK, WK, YK."""
        names = [self.U(0), self.Y(0)]
        for t in range(1, self.K + 1):
            names += [self.Z(t), self.A(t), self.W(t)]
            if t < self.K:
                names.append(self.U(t))
            names.append(self.Y(t))
        return names

    def observed(self) -> list[str]:
        return [n for n in self.order() if not n.startswith("U")]

    def latent(self) -> list[str]:
        return self.Us(self.K - 1)


K2 = ProximalRoles(2)
