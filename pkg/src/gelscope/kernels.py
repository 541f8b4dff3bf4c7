"""Catalog of coagulation kernels.

A :class:`Kernel` is an immutable description of a symmetric rate function
``K(x, y)``.  Every family knows how to evaluate itself pointwise (scalar or
vectorised), where its infimum over a box ``[a, ra]^2`` sits, and how its
``H(a)`` grows for large ``a``.  The string grammar used on the command line
is ``family(name=value,...)``, e.g. ``k0log(alpha=2)`` or ``minpow(gamma=1.2,theta=1)``.
"""

from __future__ import annotations

import ast
import math
import re
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DomainError, NotApplicableError, ParseError, ToleranceNotMetError

E = math.e

# family -> (parameter names in canonical order, defaults)
FAMILIES: dict[str, tuple[tuple[str, ...], dict[str, float]]] = {
    "constant": (("c",), {"c": 1.0}),
    "additive": ((), {}),
    "multiplicative": ((), {}),
    "prodpow": (("gamma",), {}),
    "minpow": (("gamma", "theta"), {"theta": 0.0}),
    "mingap": (("gamma", "theta"), {"theta": 1.0}),
    "k0log": (("alpha",), {}),
    "k1log": (("alpha",), {}),
    "sqrtlog": (("alpha",), {}),
    "diagonal": (("power", "logpow"), {"power": 1.0, "logpow": 0.0}),
    "custom": (("expr",), {}),
}


def log_e(x):
    """``log(e + x)``, the logarithmic weight used by the log-modified families."""
    return np.log(E + x)


def _pos_part_pow(u, theta):
    # u_+^theta, with u_+^0 read as the indicator of u > 0
    u = np.maximum(u, 0.0)
    if theta == 0:
        return (u > 0).astype(float) if isinstance(u, np.ndarray) else float(u > 0)
    return u**theta


_SAFE_NAMES = {
    "x": None, "y": None,
    "exp": np.exp, "log": np.log, "sqrt": np.sqrt, "abs": np.abs,
    "minimum": np.minimum, "maximum": np.maximum, "min": np.minimum, "max": np.maximum,
    "e": E, "pi": math.pi,
}
_SAFE_NODES = (
    ast.Expression, ast.BinOp, ast.UnaryOp, ast.Call, ast.Name, ast.Load,
    ast.Constant, ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.USub, ast.UAdd,
)


def _compile_expr(expr: str) -> Callable:
    tree = ast.parse(expr, mode="eval")
    for node in ast.walk(tree):
        if not isinstance(node, _SAFE_NODES):
            raise ParseError(f"disallowed syntax in kernel expression: {expr!r}")
        if isinstance(node, ast.Name) and node.id not in _SAFE_NAMES:
            raise ParseError(f"unknown name {node.id!r} in kernel expression")
    code = compile(tree, "<kernel>", "eval")
    env = {k: v for k, v in _SAFE_NAMES.items() if v is not None}

    def fn(x, y):
        return eval(code, {"__builtins__": {}}, {**env, "x": x, "y": y})

    return fn


@dataclass(frozen=True)
class Kernel:
    """A coagulation kernel from the catalog.

    ``family`` selects the formula; ``params`` holds its numeric parameters
    (or the expression string for ``custom``).  Use :func:`parse_kernel` or
    the constructors below rather than building instances by hand.
    """

    family: str
    params: tuple[tuple[str, float | str], ...] = ()
    _fn: Callable | None = field(default=None, compare=False, repr=False, hash=False)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ParseError(f"unknown kernel family {self.family!r}")
        names, defaults = FAMILIES[self.family]
        given = dict(self.params)
        unknown = set(given) - set(names)
        if unknown:
            raise ParseError(f"{self.family}: unknown parameter(s) {sorted(unknown)}")
        full = []
        for name in names:
            if name in given:
                val = given[name]
            elif name in defaults:
                val = defaults[name]
            else:
                raise ParseError(f"{self.family}: missing parameter {name!r}")
            if name != "expr":
                val = float(val)
                if not math.isfinite(val):
                    raise DomainError(f"{self.family}: {name} must be finite")
            full.append((name, val))
        object.__setattr__(self, "params", tuple(full))
        self._validate()
        if self.family == "custom":
            object.__setattr__(self, "_fn", _compile_expr(str(self.p("expr"))))

    def _validate(self):
        f = self.family
        if f == "constant" and self.p("c") < 0:
            raise DomainError("constant kernel needs c >= 0")
        if f in ("prodpow",) and self.p("gamma") < 0:
            raise DomainError("prodpow needs gamma >= 0")
        if f in ("minpow", "mingap"):
            if self.p("gamma") <= 0 or self.p("theta") < 0:
                raise DomainError(f"{f} needs gamma > 0 and theta >= 0")
        if f in ("k0log", "k1log", "sqrtlog") and self.p("alpha") < 0:
            raise DomainError(f"{f} needs alpha >= 0")

    def p(self, name: str):
        for k, v in self.params:
            if k == name:
                return v
        raise KeyError(name)

    # -- metadata -----------------------------------------------------------

    @property
    def gamma(self) -> float | None:
        """Homogeneity degree, ``None`` for families that are not homogeneous."""
        f = self.family
        if f == "constant":
            return 0.0
        if f in ("additive",):
            return 1.0
        if f == "multiplicative":
            return 2.0
        if f in ("prodpow", "minpow", "mingap"):
            return self.p("gamma")
        if f in ("k0log", "k1log", "sqrtlog") and self.p("alpha") == 0:
            return 1.0
        return None

    @property
    def alpha(self) -> float | None:
        if self.family in ("k0log", "k1log", "sqrtlog"):
            return self.p("alpha")
        return None

    @property
    def closed_form_H(self) -> bool:
        return self.family != "custom"

    # -- evaluation ---------------------------------------------------------

    def __call__(self, x, y):
        return self.eval(x, y)

    def eval(self, x: float, y: float) -> float:
        """Pointwise rate ``K(x, y)``; bit-exactly symmetric."""
        x = float(x)
        y = float(y)
        if not (math.isfinite(x) and math.isfinite(y)) or x <= 0 or y <= 0:
            raise DomainError(f"kernel arguments must be finite and positive, got ({x}, {y})")
        lo, hi = (x, y) if x <= y else (y, x)
        return float(self._eval_sorted(lo, hi))

    def evaluate(self, x, y) -> np.ndarray:
        """Vectorised evaluation with broadcasting; no domain checks."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        lo = np.minimum(x, y)
        hi = np.maximum(x, y)
        out = self._eval_sorted(lo, hi)
        return np.broadcast_to(out, np.broadcast(lo, hi).shape).astype(float)

    def _eval_sorted(self, lo, hi):
        f = self.family
        if f == "constant":
            return self.p("c") + 0.0 * lo
        if f == "additive":
            return lo + hi
        if f == "multiplicative":
            return lo * hi
        if f == "prodpow":
            return (lo * hi) ** (0.5 * self.p("gamma"))
        if f == "minpow":
            return lo ** self.p("gamma") * (lo / hi) ** self.p("theta")
        if f == "mingap":
            return lo ** self.p("gamma") * _pos_part_pow(lo / hi - 0.5, self.p("theta"))
        if f == "k0log":
            return lo * np.maximum(lo / hi - 0.5, 0.0) * log_e(lo) ** self.p("alpha")
        if f == "k1log":
            return (lo + hi) * log_e(lo) ** self.p("alpha")
        if f == "sqrtlog":
            return np.sqrt(lo * hi) * (log_e(lo) * log_e(hi)) ** (0.5 * self.p("alpha"))
        if f == "diagonal":
            rate = lo ** self.p("power") * log_e(lo) ** self.p("logpow")
            return np.where(lo == hi, rate, 0.0) if isinstance(lo, np.ndarray) else (rate if lo == hi else 0.0)
        if f == "custom":
            val = self._fn(lo, hi)
            return np.maximum(val, 0.0) if isinstance(val, np.ndarray) else max(float(val), 0.0)
        raise AssertionError(f)

    def diagonal_rate(self, x):
        """``K(x, x)`` vectorised."""
        x = np.asarray(x, dtype=float)
        return self._eval_sorted(x, x) + 0.0 * x

    # -- rendering ----------------------------------------------------------

    def render(self) -> str:
        names, defaults = FAMILIES[self.family]
        if not names:
            return self.family
        parts = []
        for name, val in self.params:
            if name == "expr":
                parts.append(f"expr={val}")
            else:
                parts.append(f"{name}={_fmt_num(val)}")
        return f"{self.family}({','.join(parts)})"

    def __str__(self):
        return self.render()


def _fmt_num(v: float) -> str:
    if float(v).is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


# ---------------------------------------------------------------------------
# constructors

def constant(c: float = 1.0) -> Kernel:
    return Kernel("constant", (("c", c),))


def additive() -> Kernel:
    return Kernel("additive")


def multiplicative() -> Kernel:
    return Kernel("multiplicative")


def product_power(gamma: float) -> Kernel:
    return Kernel("prodpow", (("gamma", gamma),))


def min_power(gamma: float, theta: float = 0.0) -> Kernel:
    return Kernel("minpow", (("gamma", gamma), ("theta", theta)))


def min_power_gap(gamma: float, theta: float = 1.0) -> Kernel:
    return Kernel("mingap", (("gamma", gamma), ("theta", theta)))


def k0_log(alpha: float) -> Kernel:
    return Kernel("k0log", (("alpha", alpha),))


def k1_log(alpha: float) -> Kernel:
    return Kernel("k1log", (("alpha", alpha),))


def sqrt_log(alpha: float) -> Kernel:
    """``(xy)^{1/2} log^{α/2}(e+x) log^{α/2}(e+y)``."""
    return Kernel("sqrtlog", (("alpha", alpha),))


def diagonal(power: float = 1.0, logpow: float = 0.0) -> Kernel:
    return Kernel("diagonal", (("power", power), ("logpow", logpow)))


def custom(expr: str) -> Kernel:
    return Kernel("custom", (("expr", expr),))


_SPEC_RE = re.compile(r"^\s*([A-Za-z_][A-Za-z0-9_]*)\s*(?:\((.*)\))?\s*$", re.S)


def parse_kernel(text: str) -> Kernel:
    """Parse ``family(name=value,...)`` into a :class:`Kernel`.

    ``parse_kernel(k.render()) == k`` holds for every catalog kernel.
    """
    m = _SPEC_RE.match(text)
    if not m:
        raise ParseError(f"cannot parse kernel spec {text!r}")
    family = m.group(1).lower()
    body = m.group(2)
    params: list[tuple[str, float | str]] = []
    if body is not None and body.strip():
        if family == "custom":
            key, sep, val = body.partition("=")
            if not sep or key.strip() != "expr":
                raise ParseError("custom kernel expects custom(expr=...)")
            params.append(("expr", val.strip()))
        else:
            for item in body.split(","):
                key, sep, val = item.partition("=")
                if not sep:
                    raise ParseError(f"expected name=value in {text!r}")
                try:
                    params.append((key.strip(), float(val)))
                except ValueError as exc:
                    raise ParseError(f"bad number {val!r} in {text!r}") from exc
    return Kernel(family, tuple(params))


# ---------------------------------------------------------------------------
# box infimum


def infimum_on_box(kernel: Kernel, a: float, r: float, refinement: int = 64,
                   rtol: float = 1e-9) -> float:
    """Certified lower estimate of ``inf{K(x, y) : x, y in [a, r a]}``.

    Catalog kernels are monotone in ``x∧y``, ``x∨y`` and the ratio on the
    box, so the infimum sits at a corner and is returned exactly.  Custom
    kernels fall back to :func:`_numeric_box_infimum`.
    """
    if not (a > 0 and math.isfinite(a)):
        raise DomainError(f"a must be positive and finite, got {a}")
    if not r > 1:
        raise DomainError(f"r must exceed 1, got {r}")
    f = kernel.family
    lo = a
    if f == "constant":
        return kernel.p("c")
    if f == "additive":
        return 2.0 * a
    if f == "multiplicative":
        return a * a
    if f == "prodpow":
        return a ** kernel.p("gamma")
    if f == "minpow":
        return a ** kernel.p("gamma") * r ** (-kernel.p("theta"))
    if f == "mingap":
        return a ** kernel.p("gamma") * float(_pos_part_pow(1.0 / r - 0.5, kernel.p("theta")))
    if f == "k0log":
        return lo * max(1.0 / r - 0.5, 0.0) * math.log(E + lo) ** kernel.p("alpha")
    if f == "k1log":
        return 2.0 * a * math.log(E + a) ** kernel.p("alpha")
    if f == "sqrtlog":
        return a * math.log(E + a) ** kernel.p("alpha")
    if f == "diagonal":
        return 0.0
    return _numeric_box_infimum(kernel, a, r, refinement, rtol).lower


@dataclass(frozen=True)
class BoxInfimum:
    lower: float
    best: float
    error: float
    argmin: tuple[float, float]


def _numeric_box_infimum(kernel: Kernel, a: float, r: float, depth: int = 64,
                         rtol: float = 1e-9, max_rounds: int = 60) -> BoxInfimum:
    """Dense-grid minimum refined by golden-section search along each axis.

    The returned ``lower`` subtracts an error estimate built from the largest
    change seen between neighbouring grid cells at the final resolution.
    """
    xs = np.linspace(a, r * a, depth)
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    vals = kernel.evaluate(X, Y)
    i, j = np.unravel_index(np.argmin(vals), vals.shape)
    x, y = xs[i], xs[j]
    best = float(vals[i, j])
    # spread between neighbouring samples bounds how far below the grid the true minimum may sit
    gx = np.abs(np.diff(vals, axis=0)).max() if depth > 1 else 0.0
    gy = np.abs(np.diff(vals, axis=1)).max() if depth > 1 else 0.0
    h = (r - 1) * a / max(depth - 1, 1)
    phi = (math.sqrt(5) - 1) / 2

    def golden(fn, lo, hi):
        c, d = hi - phi * (hi - lo), lo + phi * (hi - lo)
        fc, fd = fn(c), fn(d)
        for _ in range(max_rounds):
            if hi - lo <= rtol * max(abs(hi), 1e-300):
                break
            if fc < fd:
                hi, d, fd = d, c, fc
                c = hi - phi * (hi - lo)
                fc = fn(c)
            else:
                lo, c, fc = c, d, fd
                d = lo + phi * (hi - lo)
                fd = fn(d)
        else:
            raise ToleranceNotMetError("box infimum refinement did not converge", interval=(lo, hi))
        xm = 0.5 * (lo + hi)
        return xm, fn(xm)

    for _ in range(4):
        x, bx = golden(lambda s: kernel.eval(s, y), max(a, x - h), min(r * a, x + h))
        y, by = golden(lambda s: kernel.eval(x, s), max(a, y - h), min(r * a, y + h))
        best = min(best, bx, by)
    err = max(gx, gy) * rtol + abs(best) * rtol
    return BoxInfimum(lower=max(best - err, 0.0), best=best, error=err, argmin=(x, y))


# ---------------------------------------------------------------------------
# homogeneity


@dataclass(frozen=True)
class HomogeneityReport:
    passed: bool
    max_relative_deviation: float


def check_homogeneity(kernel: Kernel, samples: int = 1000, gamma: float | None = None,
                      seed: int = 0, rtol: float = 1e-10) -> HomogeneityReport:
    """Sample ``(λ, x, y)`` log-uniformly in ``[1e-3, 1e3]^3`` and test ``K(λx, λy) = λ^γ K(x, y)``.

    ``gamma`` overrides the kernel's own degree, which lets callers test a
    claimed degree for a non-homogeneous family.
    """
    g = kernel.gamma if gamma is None else gamma
    if g is None:
        raise NotApplicableError(f"{kernel}: no homogeneity degree")
    rng = np.random.default_rng(seed)
    lam, x, y = 10.0 ** rng.uniform(-3, 3, size=(3, samples))
    lhs = kernel.evaluate(lam * x, lam * y)
    rhs = lam**g * kernel.evaluate(x, y)
    scale = np.maximum(np.abs(lhs), np.abs(rhs))
    dev = np.where(scale > 0, np.abs(lhs - rhs) / np.where(scale > 0, scale, 1.0), 0.0)
    worst = float(dev.max())
    return HomogeneityReport(worst <= rtol, worst)


# ---------------------------------------------------------------------------
# structural helpers used by the solvers


def is_dyadic_closed(kernel: Kernel) -> bool:
    """True when ``K(2^n, 2^m) = 0`` for ``n != m``, so data on ``2^N`` stays there."""
    if kernel.family == "diagonal":
        return True
    if kernel.family == "k0log":
        return True
    if kernel.family == "mingap":
        return kernel.p("theta") > 0
    return False


def separable_majorant(kernel: Kernel) -> list[tuple[Callable, Callable]] | None:
    """Weight pairs ``(f, g)`` with ``K(x, y) <= (1/2) Σ [f(x)g(y) + f(y)g(x)]``.

    Returns ``None`` when no useful separable bound is known for the family.
    """
    f = kernel.family
    one = lambda m: np.ones_like(m, dtype=float)  # noqa: E731
    ident = lambda m: np.asarray(m, dtype=float)  # noqa: E731
    if f == "constant":
        c = kernel.p("c")
        return [(lambda m: c * one(m), one)]
    if f == "additive":
        # x + y = (1/2)[(x·1 + 1·y) + (y·1 + 1·x)]
        return [(ident, one), (one, ident)]
    if f == "multiplicative":
        return [(ident, ident)]
    if f == "prodpow":
        h = 0.5 * kernel.p("gamma")
        w = lambda m: np.asarray(m, dtype=float) ** h  # noqa: E731
        return [(w, w)]
    if f in ("minpow", "mingap"):
        # (x∧y)^γ (ratio)^θ <= (x∧y)^γ <= (xy)^{γ/2}
        h = 0.5 * kernel.p("gamma")
        w = lambda m: np.asarray(m, dtype=float) ** h  # noqa: E731
        return [(w, w)]
    if f == "k1log":
        # log(e + x∧y) <= sqrt(log(e+x) log(e+y))
        h = 0.5 * kernel.p("alpha")
        lw = lambda m: log_e(np.asarray(m, dtype=float)) ** h  # noqa: E731
        xl = lambda m: np.asarray(m, dtype=float) * lw(m)  # noqa: E731
        return [(xl, lw), (lw, xl)]
    if f == "sqrtlog":
        h = 0.5 * kernel.p("alpha")
        w = lambda m: np.sqrt(np.asarray(m, dtype=float)) * log_e(np.asarray(m, dtype=float)) ** h  # noqa: E731
        return [(w, w)]
    return None
