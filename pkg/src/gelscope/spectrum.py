"""Finite discrete measures on (0, ∞) and time-ordered trajectories of them."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Iterator, Mapping

import numpy as np

from .errors import DomainError, ParseError


class MassSpectrum(Mapping):
    """Finite nonnegative measure ``Σ c_x δ_x`` with a lost-mass ledger.

    Behaves as a read-only mapping ``mass -> concentration``.  Masses are kept
    sorted in a float array, which covers both integer and dyadic supports.
    Zero concentrations are kept so that dense solver output round-trips.
    """

    __slots__ = ("masses", "conc", "lost_mass")

    def __init__(self, masses, conc, lost_mass: float = 0.0):
        m = np.asarray(masses, dtype=float).ravel()
        c = np.asarray(conc, dtype=float).ravel()
        if m.shape != c.shape:
            raise DomainError("masses and concentrations differ in length")
        if m.size and (np.any(m <= 0) or not np.all(np.isfinite(m))):
            raise DomainError("masses must be positive and finite")
        if np.any(c < 0) or not np.all(np.isfinite(c)):
            raise DomainError("concentrations must be nonnegative and finite")
        if lost_mass < 0:
            raise DomainError("lost mass cannot be negative")
        order = np.argsort(m, kind="stable")
        m, c = m[order], c[order]
        if m.size > 1 and np.any(np.diff(m) == 0):
            uniq, inv = np.unique(m, return_inverse=True)
            c = np.bincount(inv, weights=c)
            m = uniq
        self.masses = m
        self.conc = c
        self.lost_mass = float(lost_mass)

    @classmethod
    def from_dict(cls, entries: Mapping[float, float], lost_mass: float = 0.0) -> "MassSpectrum":
        items = sorted(entries.items())
        return cls([k for k, _ in items], [v for _, v in items], lost_mass)

    @classmethod
    def dirac(cls, mass: float = 1.0, weight: float = 1.0) -> "MassSpectrum":
        return cls([mass], [weight])

    @classmethod
    def dense(cls, conc, lost_mass: float = 0.0) -> "MassSpectrum":
        """Spectrum on masses ``1..len(conc)``."""
        conc = np.asarray(conc, dtype=float)
        return cls(np.arange(1, conc.size + 1, dtype=float), conc, lost_mass)

    # mapping protocol
    def __getitem__(self, mass):
        i = np.searchsorted(self.masses, mass)
        if i < self.masses.size and self.masses[i] == mass:
            return float(self.conc[i])
        raise KeyError(mass)

    def __iter__(self) -> Iterator[float]:
        return iter(self.masses.tolist())

    def __len__(self):
        return int(self.masses.size)

    def __repr__(self):
        body = ", ".join(f"{m:g}: {c:.6g}" for m, c in zip(self.masses[:6], self.conc[:6]))
        more = ", ..." if len(self) > 6 else ""
        return f"MassSpectrum({{{body}{more}}}, lost_mass={self.lost_mass:.6g})"

    def __eq__(self, other):
        if not isinstance(other, MassSpectrum):
            return NotImplemented
        return (np.array_equal(self.masses, other.masses) and np.array_equal(self.conc, other.conc)
                and self.lost_mass == other.lost_mass)

    __hash__ = None

    def support(self) -> np.ndarray:
        return self.masses[self.conc > 0]

    def trimmed(self) -> "MassSpectrum":
        keep = self.conc > 0
        return MassSpectrum(self.masses[keep], self.conc[keep], self.lost_mass)

    # observables
    def moment(self, k: float) -> float:
        """``M_k = Σ x^k c_x``."""
        return float(np.dot(self.masses**k, self.conc))

    @property
    def M0(self) -> float:
        return float(self.conc.sum())

    @property
    def M1(self) -> float:
        return float(np.dot(self.masses, self.conc))

    @property
    def M2(self) -> float:
        return float(np.dot(self.masses**2, self.conc))

    def xlogx_moment(self) -> float:
        """``∫ x log(e + x) f(dx)``."""
        return float(np.dot(self.masses * np.log(math.e + self.masses), self.conc))

    def integrate(self, fn) -> float:
        """``∫ fn(x) f(dx)`` for a vectorised ``fn``."""
        return float(np.dot(fn(self.masses), self.conc))

    def mass_above(self, x0: float) -> float:
        """``f((x0, ∞))``."""
        return float(self.conc[self.masses > x0].sum())

    def excess_mass_above(self, x0: float) -> float:
        """``∫_{x0}^∞ (x - x0) f(dx)``."""
        sel = self.masses > x0
        return float(np.dot(self.masses[sel] - x0, self.conc[sel]))

    def is_integer_supported(self, n_max: int | None = None) -> bool:
        m = self.support()
        ok = bool(np.all(m == np.round(m)))
        if n_max is not None:
            ok = ok and (m.size == 0 or m.max() <= n_max)
        return ok

    def to_dense(self, n_max: int) -> np.ndarray:
        """Concentrations on masses ``1..n_max``; the support must be integer and fit."""
        if not self.is_integer_supported(n_max):
            raise DomainError(f"spectrum is not supported in {{1..{n_max}}}")
        out = np.zeros(n_max)
        sel = self.conc > 0
        out[self.masses[sel].astype(np.int64) - 1] = self.conc[sel]
        return out

    def normalized(self) -> "MassSpectrum":
        """Probability profile ``c / M0``."""
        z = self.M0
        if z <= 0:
            raise DomainError("empty spectrum cannot be normalized")
        return MassSpectrum(self.masses, self.conc / z)


_DIRAC_RE = re.compile(r"^\s*delta\s*\(\s*([^)]*)\)\s*$")


def parse_spectrum(text: str) -> MassSpectrum:
    """Parse an initial-data string.

    Accepted forms: ``delta(1)``, ``delta(mass=1,weight=2)`` or an explicit
    list ``1:1,0.5:1`` of ``mass:concentration`` pairs.
    """
    text = text.strip()
    m = _DIRAC_RE.match(text)
    try:
        if m:
            args = [s.strip() for s in m.group(1).split(",") if s.strip()]
            mass, weight = 1.0, 1.0
            for i, arg in enumerate(args):
                key, sep, val = arg.partition("=")
                if sep:
                    if key.strip() == "mass":
                        mass = float(val)
                    elif key.strip() == "weight":
                        weight = float(val)
                    else:
                        raise ParseError(f"unknown delta parameter {key!r}")
                elif i == 0:
                    mass = float(arg)
                elif i == 1:
                    weight = float(arg)
            return MassSpectrum.dirac(mass, weight)
        entries: dict[float, float] = {}
        for item in text.split(","):
            k, sep, v = item.partition(":")
            if not sep:
                raise ParseError(f"expected mass:concentration, got {item!r}")
            entries[float(k)] = entries.get(float(k), 0.0) + float(v)
        return MassSpectrum.from_dict(entries)
    except ValueError as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(f"cannot parse spectrum {text!r}: {exc}") from exc


def render_spectrum(spec: MassSpectrum) -> str:
    if len(spec) == 1:
        return f"delta(mass={spec.masses[0]!r},weight={spec.conc[0]!r})"
    return ",".join(f"{m!r}:{c!r}" for m, c in zip(spec.masses, spec.conc))


MOMENT_COLUMNS = ("t", "M0", "M1", "M2", "xlogx_moment", "lost_mass")


@dataclass
class Trajectory:
    """Time-ordered snapshots on a fixed mass support, plus a moment series.

    ``conc[i]`` is the concentration vector at ``times[i]`` over ``masses``;
    ``lost[i]`` is the cumulative mass removed past the truncation boundary.
    ``moments`` may be denser in time than the snapshots (the solvers record
    moments at every accepted step).
    """

    times: np.ndarray
    masses: np.ndarray
    conc: np.ndarray
    lost: np.ndarray
    moments: np.ndarray = field(default=None)  # columns MOMENT_COLUMNS
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.masses = np.asarray(self.masses, dtype=float)
        self.conc = np.asarray(self.conc, dtype=float).reshape(len(self.times), len(self.masses))
        self.lost = np.asarray(self.lost, dtype=float)
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise DomainError("trajectory times must be strictly increasing")
        if self.moments is None:
            self.moments = moments_table(self.times, self.masses, self.conc, self.lost)

    def __len__(self):
        return int(self.times.size)

    def snapshot(self, i: int) -> MassSpectrum:
        return MassSpectrum(self.masses, self.conc[i], self.lost[i])

    @property
    def snapshots(self) -> list[tuple[float, MassSpectrum]]:
        return [(float(t), self.snapshot(i)) for i, t in enumerate(self.times)]

    @property
    def initial(self) -> MassSpectrum:
        return self.snapshot(0)

    @property
    def final(self) -> MassSpectrum:
        return self.snapshot(len(self) - 1)

    def column(self, name: str) -> np.ndarray:
        return self.moments[:, MOMENT_COLUMNS.index(name)]

    @property
    def t_end(self) -> float:
        return float(max(self.times[-1], self.moments[-1, 0]))


def moments_table(times, masses, conc, lost) -> np.ndarray:
    masses = np.asarray(masses, dtype=float)
    conc = np.atleast_2d(conc)
    cols = [
        np.asarray(times, dtype=float),
        conc.sum(axis=1),
        conc @ masses,
        conc @ masses**2,
        conc @ (masses * np.log(math.e + masses)),
        np.asarray(lost, dtype=float),
    ]
    return np.column_stack(cols)
