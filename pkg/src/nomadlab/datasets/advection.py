"""Linear transport of a narrow Gaussian bump, sampled from the exact solution."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..errors import ConfigError
from .types import OperatorDataset


@dataclass(frozen=True)
class AdvectionConfig:
    n_samples: int = 1000
    seed: int = 0
    Nx: int = 256
    Nt: int = 100
    c: float = 1.0
    mu_low: float = 0.05
    mu_high: float = 1.0
    width: float = 0.0002
    x_max: float = 2.0
    t_max: float = 1.0

    def validate(self):
        if self.n_samples < 1:
            raise ConfigError(f"n_samples must be >= 1, got {self.n_samples}")
        if self.Nx < 2 or self.Nt < 2:
            raise ConfigError("need at least two grid points in x and t")
        if self.width <= 0:
            raise ConfigError(f"width must be positive, got {self.width}")


def gaussian_bump(x, mu, width):
    return np.exp(-((x - mu) ** 2) / width) / np.sqrt(width * np.pi)


def advection_solution(mu, x, t, c=1.0, width=0.0002):
    """Exact solution s(x, t) = s0(x - c t) for the bump centred at ``mu``."""
    return gaussian_bump(x - c * t, mu, width)


def advection_grids(cfg: AdvectionConfig):
    """Spatial grid, time grid and the (Nt*Nx, 2) query array in time-major order."""
    x = np.linspace(0.0, cfg.x_max, cfg.Nx)
    t = np.linspace(0.0, cfg.t_max, cfg.Nt)
    tt, xx = np.meshgrid(t, x, indexing="ij")
    y = np.stack([xx.ravel(), tt.ravel()], axis=1)
    return x, t, y


def gen_advection(cfg: AdvectionConfig) -> OperatorDataset:
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    mu = rng.uniform(cfg.mu_low, cfg.mu_high, size=cfg.n_samples)
    x, t, y = advection_grids(cfg)
    u = gaussian_bump(x[None, :], mu[:, None], cfg.width)[..., None]
    s = np.empty((cfg.n_samples, y.shape[0], 1))
    for i, mu_i in enumerate(mu):
        s[i, :, 0] = advection_solution(mu_i, y[:, 0], y[:, 1], cfg.c, cfg.width)
    dx = cfg.x_max / (cfg.Nx - 1)
    dt = cfg.t_max / (cfg.Nt - 1)
    return OperatorDataset(
        "advection", x[:, None], u, y, s, mu[:, None],
        seed=cfg.seed, cell_weight=dx * dt,
        config={k: str(v) for k, v in asdict(cfg).items()},
    )
