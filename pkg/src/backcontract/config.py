"""Experiment configuration (TOML)."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import tomli

from .backward import DEFAULT_FIT_START, DEFAULT_NODE_CAP
from .dynamics import make_system
from .errors import ConfigurationError
from .rates import DEFAULT_SLACK

DEFAULT_TREE_DEPTH = {"doubling": 10, "quadratic": 18, "viana": 8}
LP_GRID = (3.5, 4.0, 5.0, 8.0)

_SECTIONS = {
    "horizons": {"orbit", "tree_depth", "node_cap", "forward_extra"},
    "samples": {"tails", "roots", "triples", "chains"},
    "rates": {"gamma", "slack", "family", "c", "tau", "values", "log_values"},
    "backward": {"fit_start", "beta_target"},
}
_TOP = {"seed", "lambda", "out", "system", *_SECTIONS}


@dataclass
class ExperimentConfig:
    system: dict
    lam: float
    seed: int
    out: str = "out"
    orbit_horizon: int = 60
    tree_depth: int | None = None
    node_cap: int = DEFAULT_NODE_CAP
    forward_extra: int = 40
    tail_samples: int = 100_000
    roots: int = 50
    triples: int = 10_000
    chain_samples: int = 10_000
    gamma: float | None = None
    slack: float = DEFAULT_SLACK
    rate_override: dict | None = None
    fit_start: int = DEFAULT_FIT_START
    beta_target: float = 0.15
    lp_grid: tuple = field(default=LP_GRID)

    def __post_init__(self):
        self.map_system = make_system(self.system)
        if self.tree_depth is None:
            self.tree_depth = DEFAULT_TREE_DEPTH[self.map_system.kind]
        for name in ("orbit_horizon", "tree_depth", "node_cap", "forward_extra", "tail_samples",
                     "roots", "triples", "chain_samples"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int) or v <= 0:
                raise ConfigurationError(f"{name} must be a positive integer, got {v!r}")
        if not self.lam > 0:
            raise ConfigurationError(f"lambda must be positive, got {self.lam}")
        if self.gamma is not None and not 0 < self.gamma < 1:
            raise ConfigurationError(f"gamma override must lie in (0, 1), got {self.gamma}")
        if not 0 <= self.slack < 1:
            raise ConfigurationError(f"slack must lie in [0, 1), got {self.slack}")
        if self.tail_samples < 100:
            raise ConfigurationError("tail sample size must be at least 100")

    @property
    def out_dir(self) -> Path:
        return Path(self.out)

    @property
    def forward_horizon(self) -> int:
        return self.tree_depth + self.forward_extra

    def resolved(self) -> dict:
        """Every setting with defaults filled in."""
        d = dataclasses.asdict(self)
        d["system"] = self.map_system.params()
        d["lambda"] = d.pop("lam")
        d["lp_grid"] = list(self.lp_grid)
        return d


def config_from_dict(raw: dict, out: str | None = None, seed: int | None = None) -> ExperimentConfig:
    unknown = set(raw) - _TOP
    if unknown:
        raise ConfigurationError(f"unknown configuration keys: {sorted(unknown)}")
    for sec, keys in _SECTIONS.items():
        extra = set(raw.get(sec, {})) - keys
        if extra:
            raise ConfigurationError(f"unknown keys in [{sec}]: {sorted(extra)}")
    if seed is None:
        seed = raw.get("seed")
    if seed is None:
        raise ConfigurationError("configuration must set an integer seed")
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigurationError(f"seed must be a non-negative integer, got {seed!r}")
    if "system" not in raw or "kind" not in raw["system"]:
        raise ConfigurationError("configuration needs a [system] table with a kind")
    if "lambda" not in raw:
        raise ConfigurationError("configuration must set lambda")
    hz, sm = raw.get("horizons", {}), raw.get("samples", {})
    rt, bw = dict(raw.get("rates", {})), raw.get("backward", {})
    override = None
    if "family" in rt:
        override = {k: rt.pop(k) for k in ("family", "c", "tau", "values", "log_values") if k in rt}
    kwargs = dict(
        system=dict(raw["system"]), lam=float(raw["lambda"]), seed=seed,
        out=out or raw.get("out", "out"),
        orbit_horizon=hz.get("orbit", 60), tree_depth=hz.get("tree_depth"),
        node_cap=hz.get("node_cap", DEFAULT_NODE_CAP), forward_extra=hz.get("forward_extra", 40),
        tail_samples=sm.get("tails", 100_000), roots=sm.get("roots", 50),
        triples=sm.get("triples", 10_000), chain_samples=sm.get("chains", 10_000),
        gamma=rt.get("gamma"), slack=float(rt.get("slack", DEFAULT_SLACK)), rate_override=override,
        fit_start=bw.get("fit_start", DEFAULT_FIT_START), beta_target=float(bw.get("beta_target", 0.15)),
    )
    return ExperimentConfig(**kwargs)


def load_config(path, out: str | None = None, seed: int | None = None) -> ExperimentConfig:
    try:
        with open(path, "rb") as fh:
            raw = tomli.load(fh)
    except FileNotFoundError as exc:
        raise ConfigurationError(f"configuration file {path} not found") from exc
    except tomli.TOMLDecodeError as exc:
        raise ConfigurationError(f"cannot parse {path}: {exc}") from exc
    return config_from_dict(raw, out=out, seed=seed)
