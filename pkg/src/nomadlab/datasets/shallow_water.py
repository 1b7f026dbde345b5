"""Shallow-water droplet benchmark solved with a first-order Lax-Friedrichs scheme.

The domain is the unit square split into ``nx * ny`` cells with reflective
walls. Conserved variables are ``(rho, rho*v1, rho*v2)``.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from ..errors import CFLError, ConfigError, InstabilityError, SolverError
from .types import OperatorDataset

log = logging.getLogger(__name__)

H_RANGE = (1.5, 2.5)
W_RANGE = (0.002, 0.008)
CENTER_RANGE = (0.4, 0.6)
INPUT_TIME = 0.002
SNAPSHOT_TIMES = (0.11, 0.16, 0.21, 0.26, 0.31)
MAX_CONSECUTIVE_FAILURES = 10


@dataclass(frozen=True)
class ShallowWaterState:
    rho: np.ndarray
    v1: np.ndarray
    v2: np.ndarray
    t: float
    dx: float
    dy: float
    g: float = 1.0

    def mass(self) -> float:
        return float(self.rho.sum() * self.dx * self.dy)

    def max_wave_speed(self) -> float:
        return float(np.max(np.sqrt(self.g * self.rho) + np.hypot(self.v1, self.v2)))

    def stable_dt(self, cfl: float = 0.5) -> float:
        return cfl * min(self.dx, self.dy) / self.max_wave_speed()


def cell_centers(nx: int, ny: int):
    x1 = (np.arange(nx) + 0.5) / nx
    x2 = (np.arange(ny) + 0.5) / ny
    return x1, x2


def sw_initial_state(h, w, xi, zeta, nx=32, ny=32, g=1.0) -> ShallowWaterState:
    """Still water with a Gaussian droplet of height ``h`` and width ``w`` at (xi, zeta)."""
    if not w > 0:
        raise ConfigError(f"droplet width must be positive, got {w}")
    if not h > -1:
        raise ConfigError(f"droplet height {h} would make the depth non-positive")
    if nx < 2 or ny < 2 or not g > 0:
        raise ConfigError(f"invalid grid {nx}x{ny} or gravity {g}")
    x1, x2 = cell_centers(nx, ny)
    r2 = (x1[:, None] - xi) ** 2 + (x2[None, :] - zeta) ** 2
    rho = 1.0 + h * np.exp(-r2 / w)
    zeros = np.zeros_like(rho)
    return ShallowWaterState(rho, zeros, zeros.copy(), 0.0, 1.0 / nx, 1.0 / ny, g)


def _pad_reflective(rho, m1, m2):
    """Add one ghost layer: depth mirrored, wall-normal momentum negated."""
    rho = np.pad(rho, 1, mode="edge")
    m1 = np.pad(m1, 1, mode="edge")
    m2 = np.pad(m2, 1, mode="edge")
    m1[0, :] *= -1.0
    m1[-1, :] *= -1.0
    m2[:, 0] *= -1.0
    m2[:, -1] *= -1.0
    return rho, m1, m2


def sw_step_lax_friedrichs(state: ShallowWaterState, dt: float, cfl: float = 0.5) -> ShallowWaterState:
    """Advance one Lax-Friedrichs step of length ``dt``."""
    limit = state.stable_dt(cfl)
    if not 0 < dt <= limit:
        raise CFLError(f"dt={dt:.6g} outside (0, {limit:.6g}] at t={state.t:.6g}")
    g = state.g
    rho, m1, m2 = _pad_reflective(state.rho, state.rho * state.v1, state.rho * state.v2)
    v1 = m1 / rho
    v2 = m2 / rho
    pressure = 0.5 * g * rho * rho
    f = (m1, m1 * v1 + pressure, m1 * v2)
    gy = (m2, m2 * v1, m2 * v2 + pressure)
    cx = dt / (2.0 * state.dx)
    cy = dt / (2.0 * state.dy)
    new = []
    for u, fx, fy in zip((rho, m1, m2), f, gy):
        avg = 0.25 * (u[2:, 1:-1] + u[:-2, 1:-1] + u[1:-1, 2:] + u[1:-1, :-2])
        new.append(avg - cx * (fx[2:, 1:-1] - fx[:-2, 1:-1]) - cy * (fy[1:-1, 2:] - fy[1:-1, :-2]))
    rho_n, m1_n, m2_n = new
    if not np.isfinite(rho_n).all() or rho_n.min() <= 0:
        raise InstabilityError(f"non-positive or non-finite depth after step to t={state.t + dt:.6g}")
    return ShallowWaterState(rho_n, m1_n / rho_n, m2_n / rho_n, state.t + dt, state.dx, state.dy, g)


def sw_solve(state: ShallowWaterState, times, cfl: float = 0.5) -> list[ShallowWaterState]:
    """States at each requested time (ascending, after ``state.t``).

    The step is fixed from the starting state, halved whenever the CFL
    bound is violated, and the last step before each output time is
    shortened so the output time is hit exactly.
    """
    dt = state.stable_dt(cfl)
    out = []
    for target in times:
        if target < state.t:
            raise ConfigError(f"output time {target} precedes current time {state.t}")
        while state.t < target:
            step = min(dt, target - state.t)
            while step > state.stable_dt(cfl):
                dt *= 0.5
                step = min(dt, target - state.t)
            state = sw_step_lax_friedrichs(state, step, cfl)
            if target - state.t < 1e-12 * max(1.0, target):
                state = replace(state, t=float(target))
        out.append(state)
    return out


@dataclass(frozen=True)
class ShallowWaterConfig:
    n_samples: int = 1000
    seed: int = 0
    nx: int = 32
    ny: int = 32
    g: float = 1.0
    input_time: float = INPUT_TIME
    snapshot_times: tuple[float, ...] = field(default=SNAPSHOT_TIMES)
    P: int = 128
    full_lattice: bool = False
    cfl: float = 0.5

    def validate(self):
        if self.n_samples < 1:
            raise ConfigError(f"n_samples must be >= 1, got {self.n_samples}")
        lattice = self.nx * self.ny * len(self.snapshot_times)
        if not self.full_lattice and not 1 <= self.P <= lattice:
            raise ConfigError(f"P must be in [1, {lattice}], got {self.P}")
        if list(self.snapshot_times) != sorted(self.snapshot_times) or self.snapshot_times[0] <= self.input_time:
            raise ConfigError("snapshot times must ascend and follow the input time")


def snapshot_lattice(cfg: ShallowWaterConfig) -> np.ndarray:
    """All (x1, x2, t) output locations, time-major then x1 then x2."""
    x1, x2 = cell_centers(cfg.nx, cfg.ny)
    tt, aa, bb = np.meshgrid(np.asarray(cfg.snapshot_times), x1, x2, indexing="ij")
    return np.stack([aa.ravel(), bb.ravel(), tt.ravel()], axis=1)


def solve_droplet(params, cfg: ShallowWaterConfig):
    """Input fields at ``input_time`` (m, 3) and the output lattice values (L, 3)."""
    h, w, xi, zeta = params
    state = sw_initial_state(h, w, xi, zeta, cfg.nx, cfg.ny, cfg.g)
    states = sw_solve(state, (cfg.input_time, *cfg.snapshot_times), cfg.cfl)
    first = states[0]
    u = np.stack([first.rho.ravel(), first.v1.ravel(), first.v2.ravel()], axis=1)
    lattice = np.concatenate(
        [np.stack([st.rho.ravel(), st.v1.ravel(), st.v2.ravel()], axis=1) for st in states[1:]]
    )
    return u, lattice


def draw_droplet(rng) -> np.ndarray:
    return np.array([rng.uniform(*H_RANGE), rng.uniform(*W_RANGE),
                     rng.uniform(*CENTER_RANGE), rng.uniform(*CENTER_RANGE)])


def gen_shallow_water(cfg: ShallowWaterConfig) -> OperatorDataset:
    cfg.validate()
    x1, x2 = cell_centers(cfg.nx, cfg.ny)
    aa, bb = np.meshgrid(x1, x2, indexing="ij")
    sensors = np.stack([aa.ravel(), bb.ravel()], axis=1)
    lattice = snapshot_lattice(cfg)
    n_lat = lattice.shape[0]
    p = n_lat if cfg.full_lattice else cfg.P
    n = cfg.n_samples
    u = np.empty((n, sensors.shape[0], 3))
    s = np.empty((n, p, 3))
    y = lattice if cfg.full_lattice else np.empty((n, p, 3))
    tags = np.empty((n, 4))
    for i in range(n):
        for attempt in range(MAX_CONSECUTIVE_FAILURES + 1):
            rng = np.random.default_rng([cfg.seed, i, attempt])
            params = draw_droplet(rng)
            try:
                u_i, values = solve_droplet(params, cfg)
                break
            except (CFLError, InstabilityError) as exc:
                log.warning("sample %d attempt %d failed (%s); redrawing", i, attempt, exc)
        else:
            raise SolverError(f"sample {i}: {MAX_CONSECUTIVE_FAILURES + 1} consecutive solver failures")
        u[i], tags[i] = u_i, params
        if cfg.full_lattice:
            s[i] = values
        else:
            pick = np.sort(rng.choice(n_lat, size=p, replace=False))
            y[i] = lattice[pick]
            s[i] = values[pick]
    lattice_weight = (1.0 / cfg.nx) * (1.0 / cfg.ny) * _snapshot_spacing(cfg)
    config = {k: str(v) for k, v in asdict(cfg).items()}
    config["snapshot_times"] = ",".join(repr(float(t)) for t in cfg.snapshot_times)
    return OperatorDataset(
        "shallow-water", sensors, u, y, s, tags,
        seed=cfg.seed, cell_weight=lattice_weight * n_lat / p, config=config,
    )


def _snapshot_spacing(cfg: ShallowWaterConfig) -> float:
    times = np.asarray(cfg.snapshot_times, dtype=float)
    if len(times) < 2:
        return 1.0
    return float(np.mean(np.diff(times)))


def config_from_echo(echo: dict[str, str]) -> ShallowWaterConfig:
    """Rebuild a generator config from the ``config.*`` header echo."""
    times = tuple(float(t) for t in echo["snapshot_times"].split(","))
    return ShallowWaterConfig(
        n_samples=int(echo["n_samples"]), seed=int(echo["seed"]),
        nx=int(echo["nx"]), ny=int(echo["ny"]), g=float(echo["g"]),
        input_time=float(echo["input_time"]), snapshot_times=times,
        P=int(echo["P"]), full_lattice=echo["full_lattice"] == "True", cfl=float(echo["cfl"]),
    )


def full_lattice_dataset(ds: OperatorDataset) -> OperatorDataset:
    """Re-solve every sample from its droplet parameters on the whole snapshot lattice."""
    if ds.benchmark_id != "shallow-water":
        raise ConfigError(f"expected a shallow-water dataset, got {ds.benchmark_id}")
    cfg = replace(config_from_echo(ds.config), full_lattice=True, n_samples=ds.n_samples)
    lattice = snapshot_lattice(cfg)
    if ds.shared_queries and ds.n_queries == lattice.shape[0]:
        return ds
    s = np.empty((ds.n_samples, lattice.shape[0], 3))
    for i, params in enumerate(ds.tags):
        _, s[i] = solve_droplet(params, cfg)
    config = dict(ds.config, full_lattice="True")
    weight = (1.0 / cfg.nx) * (1.0 / cfg.ny) * _snapshot_spacing(cfg)
    return OperatorDataset("shallow-water", ds.sensors, ds.u, lattice, s, ds.tags,
                           seed=ds.seed, cell_weight=weight, config=config)
