"""Bounded test functions ψ and their increments Δψ(x, y) = ψ(x+y) - ψ(x) - ψ(y)."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ..bounds import log_tail_integral
from ..errors import DomainError

KINDS = ("trunc_id", "indicator", "sq_trunc", "xlog_trunc", "psi_log")


@lru_cache(maxsize=1 << 16)
def _J(y: float, alpha: float) -> float:
    return log_tail_integral(y, alpha)


@dataclass(frozen=True)
class TestFunction:
    """One member of the ψ catalog.

    ``trunc_id``    x ∧ a
    ``indicator``   1{lo < x < a}
    ``sq_trunc``    (x ∧ a)^2
    ``xlog_trunc``  (x ∧ a) log(e + x ∧ a)
    ``psi_log``     x 1{x <= a} ∫_x^∞ du / ((u/2) log^α(e + u/2))   (needs ``alpha > 1``)
    """

    __test__ = False  # not a pytest class

    kind: str
    a: float
    lo: float = 0.0
    alpha: float = 2.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainError(f"unknown test function kind {self.kind!r}")
        if not self.a > 0:
            raise DomainError("a must be positive")
        if self.kind == "indicator" and not 0 <= self.lo < self.a:
            raise DomainError("indicator needs 0 <= lo < a")
        if self.kind == "psi_log" and not self.alpha > 1:
            raise DomainError("psi_log needs alpha > 1")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        a = self.a
        k = self.kind
        if k == "trunc_id":
            return np.minimum(x, a)
        if k == "indicator":
            return ((x > self.lo) & (x < a)).astype(float)
        if k == "sq_trunc":
            return np.minimum(x, a) ** 2
        if k == "xlog_trunc":
            m = np.minimum(x, a)
            return m * np.log(math.e + m)
        flat = x.ravel()
        out = np.array([2.0 * v * _J(0.5 * v, self.alpha) if v <= a else 0.0 for v in flat.tolist()])
        return out.reshape(x.shape)

    def delta(self, x, y):
        """``Δψ(x, y)``; closed form for the truncated identity."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.kind == "trunc_id":
            a = self.a
            return np.minimum(x + y, a) - np.minimum(x, a) - np.minimum(y, a)
        return self(x + y) - self(x) - self(y)

    def render(self) -> str:
        extra = f",lo={self.lo!r}" if self.kind == "indicator" else f",alpha={self.alpha!r}" if self.kind == "psi_log" else ""
        return f"{self.kind}(a={self.a!r}{extra})"


def catalog(a: float, alpha: float = 2.0) -> list[TestFunction]:
    """The full ψ catalog at truncation ``a``."""
    return [
        TestFunction("trunc_id", a),
        TestFunction("indicator", a),
        TestFunction("sq_trunc", a),
        TestFunction("xlog_trunc", a),
        TestFunction("psi_log", a, alpha=alpha),
    ]
