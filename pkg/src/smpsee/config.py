"""Plain-text ``key = value`` scenario configuration, parsed fail-closed.

Recognised keys and defaults (``#`` starts a comment, blank lines are ignored):

====================  ===================  =================================================
key                   default              meaning
====================  ===================  =================================================
scenario              lq-linear-phi        lq-linear-phi | lq-quadratic-phi | tanh-drift
n_state               0                    state modes; 0 takes the scenario default
n_control             0                    control coordinates; 0 means n_state
n_noise               0                    noise modes; 0 means n_state
horizon               1.0                  final time T
n_steps               50                   grid intervals N
n_paths               2000                 Monte Carlo paths
seed                  0                    noise seed
noise_scale           1.0                  multiplies every Brownian increment
zero_terminal         false                drop the terminal cost
box_lo                (empty)              lower control bounds, scalar or list
box_hi                (empty)              upper control bounds; both empty = unconstrained
degree                2                    regression polynomial degree
active_modes          (empty)              regressor modes; empty = first min(n, 4)
step_size             0.1                  optimizer step
max_iters             200                  optimizer iteration cap
grad_tol              1e-6                 projected-gradient stopping tolerance
armijo                false                backtracking on the control-variate cost
armijo_factor         0.5                  backtracking shrink factor
armijo_slope          1e-4                 sufficient-decrease slope
epsilons              0.2,0.1,0.05,0.025   decreasing ladder, at least 4 rungs
direction_amplitude   0.5                  amplitude of the perturbation direction
slope_lo              1.8                  rate band, lower edge
slope_hi              2.2                  rate band, upper edge
decay_factor          0.1                  required eta decay across the ladder
n_sigma               3.0                  Monte Carlo sigma multiplier
monotone_sigma        2.0                  slack for the eta monotonicity check
expansion_factor      0.1                  remainder bound as a fraction of the linear term
inequality_factor     0.1                  variational-inequality slack factor
certificate_tol       1e-3                 certificate tolerance relative to the cost scale
n_probes              100                  random probe controls for the certificate
adjoint_csv_paths     100                  paths written to adjoint.csv; 0 writes all
====================  ===================  =================================================
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .scenarios import SCENARIOS


class ConfigError(ValueError):
    pass


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _floats(text: str) -> tuple:
    text = text.strip()
    return tuple(float(v) for v in text.split(",")) if text else ()


def _ints(text: str) -> tuple:
    text = text.strip()
    return tuple(int(v) for v in text.split(",")) if text else ()


def _scenario(text: str) -> str:
    text = text.strip()
    if text not in SCENARIOS:
        raise ValueError(f"unknown scenario {text!r}; choose from {', '.join(SCENARIOS)}")
    return text


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: str = "lq-linear-phi"
    n_state: int = 0
    n_control: int = 0
    n_noise: int = 0
    horizon: float = 1.0
    n_steps: int = 50
    n_paths: int = 2000
    seed: int = 0
    noise_scale: float = 1.0
    zero_terminal: bool = False
    box_lo: tuple = ()
    box_hi: tuple = ()
    degree: int = 2
    active_modes: tuple = ()
    step_size: float = 0.1
    max_iters: int = 200
    grad_tol: float = 1e-6
    armijo: bool = False
    armijo_factor: float = 0.5
    armijo_slope: float = 1e-4
    epsilons: tuple = (0.2, 0.1, 0.05, 0.025)
    direction_amplitude: float = 0.5
    slope_lo: float = 1.8
    slope_hi: float = 2.2
    decay_factor: float = 0.1
    n_sigma: float = 3.0
    monotone_sigma: float = 2.0
    expansion_factor: float = 0.1
    inequality_factor: float = 0.1
    certificate_tol: float = 1e-3
    n_probes: int = 100
    adjoint_csv_paths: int = 100

    def __post_init__(self):
        _scenario(self.scenario)
        for name in ("n_state", "n_control", "n_noise"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        for name in ("n_steps", "n_paths", "degree", "n_probes"):
            if getattr(self, name) < (0 if name == "degree" else 1):
                raise ConfigError(f"{name} must be positive")
        if self.max_iters < 0:
            raise ConfigError("max_iters must be >= 0")
        if self.adjoint_csv_paths < 0:
            raise ConfigError("adjoint_csv_paths must be >= 0")
        for name in ("horizon", "step_size", "grad_tol", "certificate_tol"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if len(self.box_lo) != len(self.box_hi):
            raise ConfigError("box_lo and box_hi must both be given with equal length")
        eps = self.epsilons
        if (len(eps) < 4 or any(not 0 < e <= 1 for e in eps)
                or any(b >= a for a, b in zip(eps, eps[1:]))):
            raise ConfigError("epsilons must be at least 4 strictly decreasing values in (0, 1]")

    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> "ScenarioConfig":
        parsers = _PARSERS
        values, seen = {}, {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in parsers:
                raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
            if key in seen:
                raise ConfigError(f"{source}:{lineno}: duplicate key {key!r} "
                                  f"(first set on line {seen[key]})")
            try:
                values[key] = parsers[key](value)
            except ValueError as exc:
                raise ConfigError(f"{source}:{lineno}: field {key!r}: {exc}") from None
            seen[key] = lineno
        try:
            return cls(**values)
        except ConfigError as exc:
            raise ConfigError(f"{source}: {exc}") from None

    @classmethod
    def from_file(cls, path) -> "ScenarioConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"{path}: cannot read configuration ({exc.strerror})") from None
        return cls.from_text(text, str(path))

    def override(self, **changes) -> "ScenarioConfig":
        changes = {k: v for k, v in changes.items() if v is not None}
        unknown = set(changes) - set(_PARSERS)
        if unknown:
            raise ConfigError(f"unknown override(s): {', '.join(sorted(unknown))}")
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    def to_text(self) -> str:
        def fmt(v):
            if isinstance(v, bool):
                return "true" if v else "false"
            if isinstance(v, tuple):
                return ",".join(repr(x) for x in v)
            return repr(v) if isinstance(v, float) else str(v)
        return "".join(f"{f.name} = {fmt(getattr(self, f.name))}\n" for f in fields(self))


def _parser_for(f):
    if f.name == "scenario":
        return _scenario
    if f.name == "active_modes":
        return _ints
    default = f.default
    if isinstance(default, bool):
        return _bool
    if isinstance(default, tuple):
        return _floats
    if isinstance(default, int):
        return int
    return float


_PARSERS = {f.name: _parser_for(f) for f in fields(ScenarioConfig)}
