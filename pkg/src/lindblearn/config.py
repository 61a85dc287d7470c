"""Run configuration: a sectioned ``key = value`` text file.

Unspecified keys take the defaults below (C = 2, proposal variance 0.3,
eta_L = 5, eta_H = 2, eta_c = 1, N = 100000 and the default move table).
Floats are written with ``repr`` so a written file reads back identically.
"""

import configparser
from dataclasses import dataclass, field, fields, replace

from .forward import SimulationSettings
from .model import PriorConfig
from .sampler import DEFAULT_MOVE_PROBS, MOVE_KINDS, MoveTable, SamplerConfig


class ConfigError(ValueError):
    pass


# config key <-> move kind
MOVE_KEYS = {
    "rate": "RATE", "birth_h": "BIRTH[H]", "death_h": "DEATH[H]", "swap_h": "SWAP[H]",
    "birth_l": "BIRTH[L]", "death_l": "DEATH[L]", "swap_l": "SWAP[L]",
    "birth_lc": "BIRTH[L*]", "death_lc": "DEATH[L*]", "swap_lc": "SWAP[L*]",
}
assert set(MOVE_KEYS.values()) == set(MOVE_KINDS)


@dataclass(frozen=True)
class RunConfig:
    # [system]
    dim: int = 2
    complexity: int = 2
    # [prior]
    eta_h: float = 2.0
    eta_l: float = 5.0
    eta_c: float = 1.0
    rate_mean: float = 0.6
    rate_sd: float = 12.0
    beta_lt: tuple = None  # (shape, rate); None derives it from the data
    beta_g2: tuple = None
    # [sampler]
    steps: int = 100_000
    proposal_variance: float = 0.3
    burn_in: float = 0.2
    thinning: int = 10
    n_start: int = 2
    rate_scales: int = 4
    anneal_start: float = 1e-3
    anneal_fraction: float = 0.5
    chains: int = 8
    seed: int = 0
    # [moves]
    moves: dict = field(default_factory=lambda: dict(DEFAULT_MOVE_PROBS))
    # [data]
    lt_file: str = ""
    g2_file: str = ""
    lt_t_max: float = 8.0
    lt_dt: float = 0.025
    g2_t_max: float = 8.0
    g2_dt: float = 0.05
    # [instrument]
    irf_fwhm: float = 0.240
    g2_weight_width: float = 1.0
    weight_lt: float = 1.0
    weight_g2: float = 1.0
    poisson_scale: float = 1e4
    strip_hamiltonian_drive: bool = True
    # [analysis]
    subsample: float = 0.1
    k_max: int = 10
    variance_target: float = 0.95
    mse_samples: int = 100

    def __post_init__(self):
        try:
            MoveTable(dict(self.moves))
            self.sampler_config()
            self.prior()
            self.settings()
        except ValueError as err:
            raise ConfigError(str(err)) from err
        if self.dim not in (2, 4):
            raise ConfigError(f"dim must be 2 or 4, got {self.dim}")
        if self.complexity < 1:
            raise ConfigError("complexity must be >= 1")
        if self.chains < 1:
            raise ConfigError("chains must be >= 1")
        for name in ("lt_t_max", "lt_dt", "g2_t_max", "g2_dt", "g2_weight_width",
                     "poisson_scale", "weight_lt", "weight_g2"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0")
        if not 0 < self.subsample <= 1:
            raise ConfigError("subsample must lie in (0, 1]")

    def sampler_config(self, seed=None):
        return SamplerConfig(self.steps, self.proposal_variance, self.burn_in, self.thinning,
                             self.seed if seed is None else seed, MoveTable(dict(self.moves)),
                             self.n_start, self.rate_scales, self.anneal_start,
                             self.anneal_fraction)

    def prior(self):
        beta = {}
        if self.beta_lt is not None:
            beta["LT"] = tuple(self.beta_lt)
        if self.beta_g2 is not None:
            beta["G2"] = tuple(self.beta_g2)
        return PriorConfig(self.eta_h, self.eta_l, self.eta_c, self.rate_mean, self.rate_sd, beta)

    def settings(self):
        return SimulationSettings(self.irf_fwhm, self.strip_hamiltonian_drive)

    def multipliers(self):
        return {"LT": self.weight_lt, "G2": self.weight_g2}

    def with_overrides(self, **kw):
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw)


SECTIONS = {
    "system": ("dim", "complexity"),
    "prior": ("eta_h", "eta_l", "eta_c", "rate_mean", "rate_sd", "beta_lt", "beta_g2"),
    "sampler": ("steps", "proposal_variance", "burn_in", "thinning", "n_start", "rate_scales",
                "anneal_start", "anneal_fraction", "chains", "seed"),
    "data": ("lt_file", "g2_file", "lt_t_max", "lt_dt", "g2_t_max", "g2_dt"),
    "instrument": ("irf_fwhm", "g2_weight_width", "weight_lt", "weight_g2", "poisson_scale",
                   "strip_hamiltonian_drive"),
    "analysis": ("subsample", "k_max", "variance_target", "mse_samples"),
}
_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _format(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(repr(float(v)) for v in value)
    if value is None:
        return ""
    return str(value)


def _parse(name, text):
    kind = _TYPES[name]
    text = text.strip()
    if kind in (tuple, "tuple"):
        if not text:
            return None
        parts = [float(p) for p in text.split(",")]
        if len(parts) != 2:
            raise ValueError("expected 'shape, rate'")
        return tuple(parts)
    if kind in (bool, "bool"):
        low = text.lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"expected a boolean, got {text!r}")
        return low in ("true", "1", "yes")
    if kind in (int, "int"):
        return int(text)
    if kind in (float, "float"):
        return float(text)
    return text


def config_to_text(cfg):
    cp = configparser.ConfigParser(interpolation=None)
    for section, names in SECTIONS.items():
        cp[section] = {n: _format(getattr(cfg, n)) for n in names}
    cp["moves"] = {k: repr(float(cfg.moves[v])) for k, v in MOVE_KEYS.items()}
    lines = []
    for section in cp.sections():
        lines.append(f"[{section}]")
        lines += [f"{k} = {v}" for k, v in cp[section].items()]
        lines.append("")
    return "\n".join(lines)


def config_from_text(text, source="<config>"):
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text, source=source)
    except configparser.Error as err:
        raise ConfigError(str(err)) from err
    kw = {}
    for section in cp.sections():
        if section == "moves":
            moves = dict(DEFAULT_MOVE_PROBS)
            for key, val in cp[section].items():
                if key not in MOVE_KEYS:
                    raise ConfigError(f"{source}: unknown move {key!r}")
                try:
                    moves[MOVE_KEYS[key]] = float(val)
                except ValueError as err:
                    raise ConfigError(f"{source}: [moves] {key}: {err}") from err
            kw["moves"] = moves
            continue
        if section not in SECTIONS:
            raise ConfigError(f"{source}: unknown section [{section}]")
        for key, val in cp[section].items():
            if key not in SECTIONS[section]:
                raise ConfigError(f"{source}: unknown key {key!r} in [{section}]")
            try:
                kw[key] = _parse(key, val)
            except ValueError as err:
                raise ConfigError(f"{source}: [{section}] {key}: {err}") from err
    return RunConfig(**kw)


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    return config_from_text(text, str(path))


def save_config(cfg, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(config_to_text(cfg))
