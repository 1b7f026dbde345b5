"""Antiderivative benchmark: u(x) = 2*pi*t*cos(2*pi*t*x) maps to s(x) = sin(2*pi*t*x)."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..errors import ConfigError
from .types import OperatorDataset


@dataclass(frozen=True)
class AntiderivativeConfig:
    n_samples: int = 1000
    seed: int = 0
    t0: float = 0.0
    T: float = 10.0
    m: int = 500
    P: int = 500

    def validate(self):
        if self.n_samples < 1:
            raise ConfigError(f"n_samples must be >= 1, got {self.n_samples}")
        if self.m < 2 or self.P < 2:
            raise ConfigError("need at least two sensors and two query points")
        if not 0 <= self.t0 <= self.T:
            raise ConfigError(f"need 0 <= t0 <= T, got t0={self.t0}, T={self.T}")


def antiderivative_input(t, x):
    return 2.0 * np.pi * t * np.cos(2.0 * np.pi * t * x)


def antiderivative_output(t, x):
    return np.sin(2.0 * np.pi * t * x)


def gen_antiderivative(cfg: AntiderivativeConfig) -> OperatorDataset:
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    t = rng.uniform(cfg.t0, cfg.T, size=cfg.n_samples)
    x = np.linspace(0.0, 1.0, cfg.m)
    y = np.linspace(0.0, 1.0, cfg.P)
    u = antiderivative_input(t[:, None], x[None, :])[..., None]
    s = antiderivative_output(t[:, None], y[None, :])[..., None]
    return OperatorDataset(
        "antiderivative", x[:, None], u, y[:, None], s, t[:, None],
        seed=cfg.seed, cell_weight=1.0 / (cfg.P - 1),
        config={k: str(v) for k, v in asdict(cfg).items()},
    )
