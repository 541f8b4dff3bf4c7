"""Marcus-Lushnikov particle system: each unordered pair of particles with
masses ``x`` and ``y`` merges at rate ``K(x, y) / N``.

Particles are stored by mass class (``mass -> count``).  Two exact engines
drive the dynamics:

``"majorant"``
    thinning against a separable bound ``K <= (1/2) Σ_j [f_j(x) g_j(y) + f_j(y) g_j(x)]``.
    A proposal picks term ``j`` with probability ``∝ F_j G_j`` (``F_j = Σ f_j``
    over particles), then a particle ``∝ f_j`` and a partner ``∝ g_j`` using
    Fenwick trees over the classes.  A proposal pairing a particle with
    itself is rejected; any other is accepted with probability ``K / K_maj``.
``"diagonal"``
    for kernels that vanish off the dyadic diagonal, when every initial mass
    is a power-of-two multiple of the smallest one: only equal masses can
    merge, so a class is picked with weight ``K(m, m) n (n - 1) / 2``.
``"classes"``
    direct sampling over all pairs of occupied classes, ``O(C^2)`` per event
    for ``C`` classes.  Used when no separable bound exists or when the
    number of classes is small (dyadic kernels keep ``C <= log2 N + 1``).

Randomness comes from ``numpy.random.Generator(PCG64(seed))`` and is drawn in
fixed-size blocks, so a run is a pure function of its inputs.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .kernels import Kernel, is_dyadic_closed, separable_majorant
from .spectrum import MassSpectrum

_BLOCK = 4096


class _Uniforms:
    """Block-buffered stream of uniforms and unit exponentials."""

    def __init__(self, seed: int):
        self.rng = np.random.Generator(np.random.PCG64(seed))
        self._u = np.empty(0)
        self._i = 0

    def u(self) -> float:
        if self._i >= self._u.size:
            self._u = self.rng.random(_BLOCK)
            self._i = 0
        v = self._u[self._i]
        self._i += 1
        return float(v)

    def exp(self) -> float:
        # 1 - U lies in (0, 1], so the log is finite
        return -math.log(1.0 - self.u())


class _Fenwick:
    """Binary indexed tree over nonnegative weights with prefix search."""

    def __init__(self, weights: np.ndarray):
        self.n = int(weights.size)
        self.w = np.array(weights, dtype=float)
        self._build()

    def _build(self):
        n = self.n
        t = [0.0] * (n + 1)
        for i in range(n):
            t[i + 1] += float(self.w[i])
            j = (i + 1) + ((i + 1) & -(i + 1))
            if j <= n:
                t[j] += t[i + 1]
        self.tree = t
        self.total = float(self.w.sum())
        self.updates = 0

    def set(self, i: int, value: float):
        delta = value - self.w[i]
        if delta == 0.0:
            return
        self.w[i] = value
        t = self.tree
        j = i + 1
        n = self.n
        while j <= n:
            t[j] += delta
            j += j & -j
        self.total += delta
        self.updates += 1
        if self.updates > 50_000:
            self._build()  # bound the drift of incremental sums

    def find(self, target: float) -> int:
        """Smallest index whose inclusive prefix sum exceeds ``target``."""
        t = self.tree
        pos = 0
        step = 1 << (self.n.bit_length())
        while step:
            nxt = pos + step
            if nxt <= self.n and t[nxt] <= target:
                pos = nxt
                target -= t[nxt]
            step >>= 1
        # guard against rounding that runs past the last positive weight
        while pos < self.n and self.w[pos] <= 0.0:
            pos += 1
        if pos >= self.n:
            pos = self.n - 1
            while pos > 0 and self.w[pos] <= 0.0:
                pos -= 1
        return pos

    def grow(self, n_new: int):
        w = np.zeros(n_new)
        w[: self.n] = self.w
        self.n = n_new
        self.w = w
        self._build()


# ---------------------------------------------------------------------------
# run record


@dataclass
class MLRun:
    """Outcome of one simulation.

    ``largest_t``/``largest_m`` record each time the largest cluster grows;
    the event log (times and merged mass pairs) is kept when ``record="events"``.
    """

    kernel: Kernel
    N: int
    seed: int
    t_end: float
    t_final: float
    initial: dict
    final: dict
    n_events: int
    largest_t: np.ndarray
    largest_m: np.ndarray
    total_mass: float
    engine: str
    proposals: int = 0
    gel_flag: bool = False
    event_t: np.ndarray | None = None
    event_x: np.ndarray | None = None
    event_y: np.ndarray | None = None
    dyadic_violations: int = 0
    dyadic_checked: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def acceptance_rate(self) -> float:
        return self.n_events / self.proposals if self.proposals else 1.0

    @property
    def largest_final(self) -> float:
        return float(self.largest_m[-1])

    def first_passage(self, threshold: float) -> float | None:
        idx = np.nonzero(self.largest_m >= threshold)[0]
        return float(self.largest_t[idx[0]]) if idx.size else None


def initial_masses(f0: MassSpectrum, N: int) -> dict[float, int]:
    """Deterministic quota assignment of ``N`` particles to the atoms of ``f0``.

    Counts are proportional to the concentrations (largest remainder rule),
    so ``δ_1`` gives ``N`` particles of mass one.
    """
    if N < 2:
        raise DomainError("N must be at least 2")
    masses = f0.support()
    w = np.array([f0[m] for m in masses], dtype=float)
    if masses.size == 0 or w.sum() <= 0:
        raise DomainError("f0 must have positive total concentration")
    share = N * w / w.sum()
    counts = np.floor(share).astype(int)
    rest = N - int(counts.sum())
    order = np.argsort(-(share - counts), kind="stable")
    counts[order[:rest]] += 1
    return {float(m): int(c) for m, c in zip(masses, counts) if c > 0}


def _is_dyadic(m: float) -> bool:
    mant, _ = math.frexp(m)
    return mant == 0.5


def simulate(
    kernel: Kernel,
    N: int,
    f0: MassSpectrum,
    seed: int,
    t_end: float,
    record: str = "summary",
    *,
    max_events: int | None = None,
    stop_largest: float | None = None,
    engine: str = "auto",
    check_dyadic: bool | None = None,
) -> MLRun:
    """Run the particle system from ``N`` particles drawn from ``f0``.

    ``record`` is ``"summary"`` (largest-cluster history and final state) or
    ``"events"`` (additionally every merge time and the two masses).
    The run ends at ``t_end``, after ``max_events`` merges, once the largest
    cluster reaches ``stop_largest``, when one particle is left, or when the
    total rate stops being finite (``gel_flag``).

    ``check_dyadic`` (default: on for dyadic-closed kernels) counts events
    that merge two unequal or non-dyadic masses.
    """
    if record not in ("summary", "events"):
        raise DomainError("record must be 'summary' or 'events'")
    if not t_end > 0:
        raise DomainError("t_end must be positive")
    counts = initial_masses(f0, N)
    if check_dyadic is None:
        check_dyadic = is_dyadic_closed(kernel)
    terms = separable_majorant(kernel)
    dyadic_ok = is_dyadic_closed(kernel) and _dyadic_ratios(counts)
    if engine == "auto":
        engine = "diagonal" if dyadic_ok else "classes" if terms is None else "majorant"
    if engine == "majorant" and terms is None:
        raise DomainError(f"no separable majorant for {kernel}")
    if engine == "diagonal" and not dyadic_ok:
        raise DomainError("the diagonal engine needs a dyadic-closed kernel and dyadic initial masses")
    engines = {"majorant": _MajorantSim, "classes": _ClassSim, "diagonal": _DiagonalSim}
    if engine not in engines:
        raise DomainError(f"unknown engine {engine!r}")
    sim = engines[engine](kernel, N, counts, terms)
    rand = _Uniforms(seed)
    keep = record == "events"
    ev_t, ev_x, ev_y = [], [], []
    largest = max(counts)
    lt, lm = [0.0], [largest]
    t = 0.0
    n_events = 0
    bad = 0
    gel = False
    limit = max_events if max_events is not None else N
    while n_events < limit and sim.n_particles > 1:
        if stop_largest is not None and largest >= stop_largest:
            break
        rate = sim.rate()
        if not math.isfinite(rate):
            gel = True
            break
        if rate <= 0:
            t = t_end
            break
        t += rand.exp() / rate
        if t > t_end:
            t = t_end
            break
        pair = sim.propose(rand)
        if pair is None:
            continue
        x, y = pair
        sim.merge(x, y)
        n_events += 1
        if check_dyadic and not (x == y and _is_dyadic(x)):
            bad += 1
        if keep:
            ev_t.append(t)
            ev_x.append(x)
            ev_y.append(y)
        if x + y > largest:
            largest = x + y
            lt.append(t)
            lm.append(largest)
    total_mass = sum(m * c for m, c in counts.items())
    run = MLRun(
        kernel=kernel, N=N, seed=seed, t_end=t_end, t_final=t, initial=dict(counts),
        final=sim.state(), n_events=n_events, largest_t=np.array(lt), largest_m=np.array(lm, dtype=float),
        total_mass=total_mass, engine=engine, proposals=sim.proposals, gel_flag=gel,
        dyadic_violations=bad, dyadic_checked=n_events if check_dyadic else 0,
    )
    if keep:
        run.event_t = np.array(ev_t)
        run.event_x = np.array(ev_x)
        run.event_y = np.array(ev_y)
    return run


def _dyadic_ratios(counts) -> bool:
    lo = min(counts)
    return all(_is_dyadic(m / lo) for m in counts)


class _DiagonalSim:
    """Only equal masses merge; classes are kept in a small Python list."""

    def __init__(self, kernel, N, counts, terms=None):
        self.kernel = kernel
        self.N = N
        self.masses = sorted(counts)
        self.n = [counts[m] for m in self.masses]
        self.k = [kernel.eval(m, m) for m in self.masses]
        self.n_particles = sum(self.n)
        self.proposals = 0

    def rate(self) -> float:
        self._w = [0.5 * k * c * (c - 1) for k, c in zip(self.k, self.n)]
        return math.fsum(self._w) / self.N

    def propose(self, rand):
        self.proposals += 1
        w = self._w
        u = rand.u() * sum(w)
        i = 0
        last = len(w) - 1
        while i < last and (u >= w[i] or w[i] == 0.0):
            u -= w[i]
            i += 1
        while w[i] == 0.0:
            i -= 1
        m = self.masses[i]
        return m, m

    def merge(self, x, y):
        i = self.masses.index(x)
        self.n[i] -= 2
        z = x + y
        if i + 1 < len(self.masses) and self.masses[i + 1] == z:
            self.n[i + 1] += 1
        else:
            j = bisect.bisect_left(self.masses, z)
            self.masses.insert(j, z)
            self.n.insert(j, 1)
            self.k.insert(j, self.kernel.eval(z, z))
        self.n_particles -= 1

    def state(self):
        return {m: c for m, c in zip(self.masses, self.n) if c > 0}


class _ClassSim:
    """Exact sampling over pairs of occupied classes."""

    def __init__(self, kernel, N, counts, terms=None):
        self.kernel = kernel
        self.N = N
        self.counts = dict(counts)
        self.n_particles = sum(self.counts.values())
        self.proposals = 0
        self._rebuild()

    def _rebuild(self):
        self.masses = np.array(sorted(self.counts), dtype=float)
        m = self.masses
        with np.errstate(over="ignore", invalid="ignore"):
            self.K = self.kernel.evaluate(m[:, None], m[None, :])
        self._dirty = False

    def _pair_rates(self):
        n = np.array([self.counts[m] for m in self.masses], dtype=float)
        R = self.K * np.outer(n, n)
        R[np.diag_indices_from(R)] = 0.5 * np.diag(self.K) * n * (n - 1)
        self._R = np.triu(R)
        return self._R

    def rate(self) -> float:
        if self._dirty:
            self._rebuild()
        R = self._pair_rates()
        with np.errstate(over="ignore", invalid="ignore"):
            return float(R.sum()) / self.N

    def propose(self, rand):
        self.proposals += 1
        flat = np.cumsum(self._R.ravel())
        k = int(np.searchsorted(flat, rand.u() * flat[-1], side="right"))
        k = min(k, flat.size - 1)
        while self._R.ravel()[k] <= 0:
            k -= 1
        C = self.masses.size
        return float(self.masses[k // C]), float(self.masses[k % C])

    def merge(self, x, y):
        for m in (x, y):
            self.counts[m] -= 1
            if self.counts[m] == 0:
                del self.counts[m]
                self._dirty = True
        z = x + y
        if z not in self.counts:
            self.counts[z] = 0
            self._dirty = True
        self.counts[z] += 1
        self.n_particles -= 1

    def state(self):
        return dict(sorted(self.counts.items()))


class _MajorantSim:
    """Thinning against a separable majorant, classes indexed in Fenwick trees."""

    def __init__(self, kernel, N, counts, terms):
        self.kernel = kernel
        self.N = N
        self.terms = terms
        # distinct weight functions, each with its own tree
        fns = []
        self.term_idx = []
        for f, g in terms:
            ij = []
            for h in (f, g):
                for k, known in enumerate(fns):
                    if known is h:
                        ij.append(k)
                        break
                else:
                    fns.append(h)
                    ij.append(len(fns) - 1)
            self.term_idx.append(tuple(ij))
        self.fns = fns
        cap = 64
        while cap < 2 * len(counts):
            cap *= 2
        self.slot_mass = np.zeros(cap)
        self.slot_count = np.zeros(cap, dtype=np.int64)
        self.slot_w = np.zeros((len(fns), cap))
        self.slot_of = {}
        self.free = list(range(cap - 1, -1, -1))
        self.trees = [_Fenwick(np.zeros(cap)) for _ in fns]
        self.n_particles = 0
        self.proposals = 0
        for m, c in sorted(counts.items()):
            self._add(m, c)

    def _slot(self, m):
        s = self.slot_of.get(m)
        if s is not None:
            return s
        if not self.free:
            cap = self.slot_mass.size
            new = 2 * cap
            self.slot_mass = np.concatenate((self.slot_mass, np.zeros(cap)))
            self.slot_count = np.concatenate((self.slot_count, np.zeros(cap, dtype=np.int64)))
            self.slot_w = np.concatenate((self.slot_w, np.zeros((len(self.fns), cap))), axis=1)
            for tr in self.trees:
                tr.grow(new)
            self.free = list(range(new - 1, cap - 1, -1))
        s = self.free.pop()
        self.slot_of[m] = s
        self.slot_mass[s] = m
        for k, fn in enumerate(self.fns):
            self.slot_w[k, s] = float(fn(np.array([m]))[0])
        return s

    def _add(self, m, dc):
        s = self._slot(m)
        c = int(self.slot_count[s]) + dc
        self.slot_count[s] = c
        for k, tr in enumerate(self.trees):
            tr.set(s, c * self.slot_w[k, s])
        if c == 0:
            del self.slot_of[m]
            self.free.append(s)
        self.n_particles += dc

    def rate(self) -> float:
        tot = [tr.total for tr in self.trees]
        self._prods = [tot[i] * tot[j] for i, j in self.term_idx]
        with np.errstate(over="ignore", invalid="ignore"):
            return 0.5 * math.fsum(self._prods) / self.N

    def propose(self, rand):
        self.proposals += 1
        prods = self._prods
        u = rand.u() * sum(prods)
        j = 0
        while j < len(prods) - 1 and u >= prods[j]:
            u -= prods[j]
            j += 1
        fi, gi = self.term_idx[j]
        s1 = self.trees[fi].find(rand.u() * self.trees[fi].total)
        s2 = self.trees[gi].find(rand.u() * self.trees[gi].total)
        if s1 == s2 and rand.u() * self.slot_count[s1] < 1.0:
            return None  # the same particle twice
        x, y = float(self.slot_mass[s1]), float(self.slot_mass[s2])
        kmaj = 0.0
        for k, (a, b) in enumerate(self.term_idx):
            kmaj += 0.5 * (self.slot_w[a, s1] * self.slot_w[b, s2] + self.slot_w[a, s2] * self.slot_w[b, s1])
        kval = self.kernel.eval(x, y)
        if kval < kmaj and rand.u() * kmaj >= kval:
            return None
        return x, y

    def merge(self, x, y):
        self._add(x, -1)
        self._add(y, -1)
        self._add(x + y, 1)

    def state(self):
        return {float(m): int(self.slot_count[s]) for m, s in sorted(self.slot_of.items())}


# ---------------------------------------------------------------------------
# observables


def empirical_spectrum(run: MLRun, t: float | None = None) -> MassSpectrum:
    """Concentrations ``count / N`` at time ``t`` (default: end of run).

    Intermediate times need the event log (``record="events"``); the state is
    rebuilt by replaying merges with time ``<= t``.
    """
    if t is None or t >= run.t_final:
        if t is not None and t > run.t_end:
            raise DomainError("t is beyond the run horizon")
        state = run.final
    else:
        if t < 0:
            raise DomainError("t must be nonnegative")
        if run.event_t is None:
            raise DomainError("intermediate spectra need a run recorded with record='events'")
        state = dict(run.initial)
        k = int(np.searchsorted(run.event_t, t, side="right"))
        for x, y in zip(run.event_x[:k], run.event_y[:k]):
            for m in (x, y):
                state[m] -= 1
                if state[m] == 0:
                    del state[m]
            state[x + y] = state.get(x + y, 0) + 1
    masses = np.array(sorted(state), dtype=float)
    conc = np.array([state[m] for m in masses], dtype=float) / run.N
    return MassSpectrum(masses, conc)


@dataclass
class GelRule:
    """Largest-cluster threshold: ``N^{2/3}`` (``"n23"``) or ``eps N`` (``"frac"``)."""

    kind: str = "n23"
    eps: float = 0.5

    def threshold(self, N: int, total_mass: float = None) -> float:
        if self.kind == "n23":
            return N ** (2.0 / 3.0)
        if self.kind == "frac":
            return self.eps * N
        raise DomainError(f"unknown rule {self.kind}")

    def render(self) -> str:
        return "n23" if self.kind == "n23" else f"frac:{self.eps!r}"


def parse_rule(text: str) -> GelRule:
    text = text.strip()
    if text == "n23":
        return GelRule("n23")
    if text.startswith("frac:"):
        eps = float(text[5:])
        if not 0 < eps <= 1:
            raise DomainError("eps must lie in (0, 1]")
        return GelRule("frac", eps)
    raise DomainError(f"unknown gel rule {text!r}; use 'n23' or 'frac:EPS'")


@dataclass
class GelTimeEstimate:
    times: list  # per run, None when censored
    median: float | None
    iqr: tuple[float, float] | None
    n_censored: int

    @property
    def censored(self) -> bool:
        return self.median is None


def gel_time_estimate(runs: list[MLRun], rule: GelRule | str = "n23") -> GelTimeEstimate:
    """First passage of the largest cluster past the rule threshold, summarised over runs.

    Censored runs count as ``+inf`` in the order statistics; if at least half
    the runs are censored the median itself is censored.
    """
    if not runs:
        raise DomainError("need at least one run")
    if isinstance(rule, str):
        rule = parse_rule(rule)
    times = [r.first_passage(rule.threshold(r.N)) for r in runs]
    vals = np.array([math.inf if s is None else s for s in times])
    n_cens = int(np.isinf(vals).sum())
    med = float(np.median(vals))
    if not math.isfinite(med):
        return GelTimeEstimate(times, None, None, n_cens)
    q1, q3 = np.quantile(vals, [0.25, 0.75])
    return GelTimeEstimate(times, med, (float(q1), float(q3)), n_cens)


def replicate(kernel: Kernel, N: int, f0: MassSpectrum, seed: int, n_runs: int, t_end: float,
              **kwargs) -> list[MLRun]:
    """Independent runs with seeds ``seed + i``, in run-index order."""
    return [simulate(kernel, N, f0, seed + i, t_end, **kwargs) for i in range(n_runs)]
