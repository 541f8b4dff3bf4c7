"""Experiment configuration: flat ``key = value`` lines, ``#`` starts a comment."""

from __future__ import annotations

import hashlib
import os
from dataclasses import asdict, dataclass, fields, replace

from ..errors import ConfigError, GelscopeError
from ..kernels import parse_kernel
from ..mlsim import parse_rule
from ..spectrum import parse_spectrum

SOLVERS = ("cascade", "grid", "mlsim")
SEED_ENV = "GELSCOPE_SEED"


@dataclass(frozen=True)
class RunConfig:
    solver: str
    kernel: str = "k0log(alpha=2)"
    f0: str = "delta(1)"
    t_end: float = 10.0
    tol: float = 1e-8
    n_max: int = 40          # cascade levels
    N_max: int = 1024        # grid truncation
    n: int = 10_000          # particles
    seed: int = 0
    seeds: int = 1           # mlsim replicate count
    rule: str = "n23"
    threshold: float = 1e-3  # relative mass-loss level for loss times
    out: str = "out.csv"
    plots: bool = True
    spectrum: bool = False   # grid: also dump the final spectrum

    def validate(self) -> "RunConfig":
        if self.solver not in SOLVERS:
            raise ConfigError(f"solver must be one of {SOLVERS}, got {self.solver!r}")
        try:
            k = parse_kernel(self.kernel)
            parse_spectrum(self.f0)
            parse_rule(self.rule)
        except GelscopeError as exc:
            raise ConfigError(str(exc)) from exc
        checks = [
            (self.t_end > 0, "t_end must be positive"),
            (self.tol > 0 and self.tol < 1, "tol must lie in (0, 1)"),
            (8 <= self.n_max <= 100_000, "n_max must lie in [8, 100000]"),
            (1 <= self.N_max <= 1 << 20, "N_max must lie in [1, 2^20]"),
            (self.n >= 2, "n must be at least 2"),
            (self.seed >= 0, "seed must be nonnegative"),
            (self.seeds >= 1, "seeds must be at least 1"),
            (0 < self.threshold < 1, "threshold must lie in (0, 1)"),
            (bool(self.out), "out must be a path"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        if self.solver == "cascade" and k.family != "k0log":
            raise ConfigError("the cascade solver needs a k0log kernel")
        return self

    @property
    def alpha(self) -> float:
        return parse_kernel(self.kernel).p("alpha")

    def render(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        """Hash of the inputs that determine the results (output location and plotting excluded)."""
        key = replace(self, out="", plots=False, spectrum=False).render()
        return hashlib.sha256(key.encode()).hexdigest()[:16]

    def with_env(self, environ=None) -> "RunConfig":
        """Apply the ``GELSCOPE_SEED`` override when set."""
        environ = os.environ if environ is None else environ
        raw = environ.get(SEED_ENV)
        if raw is None or raw.strip() == "":
            return self
        try:
            seed = int(raw)
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {raw!r}") from exc
        return replace(self, seed=seed)


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, raw: str):
    t = _TYPES[key]
    try:
        if t == "bool":
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if t == "int":
            return int(float(raw)) if "e" in raw.lower() else int(raw)
        if t == "float":
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc


def parse_config(text: str) -> RunConfig:
    """Parse and validate a config.  Unknown or repeated keys are errors."""
    values = {}
    for no, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {no}: expected key = value")
        key, raw = (s.strip() for s in body.split("=", 1))
        if key not in _TYPES:
            raise ConfigError(f"line {no}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {no}: repeated key {key!r}")
        values[key] = _coerce(key, raw)
    if "solver" not in values:
        raise ConfigError("missing required key 'solver'")
    return RunConfig(**values).validate()


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def config_dict(cfg: RunConfig) -> dict:
    return asdict(cfg)
