"""In-memory containers for operator-learning data."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, ShapeError

BENCHMARKS = ("antiderivative", "advection", "shallow-water")


@dataclass(frozen=True)
class OperatorSample:
    """One input function, its query points and the target values there."""

    u_values: np.ndarray  # (m, d_u)
    y_points: np.ndarray  # (P, d_y)
    s_values: np.ndarray  # (P, d_s)
    latent_tag: np.ndarray | None = None


@dataclass
class OperatorDataset:
    """A batch of samples on a shared sensor grid, stored as stacked arrays.

    ``y`` is either ``(P, d_y)`` when every sample is queried at the same
    points, or ``(N, P, d_y)`` when query points vary per sample.
    ``cell_weight`` is the quadrature weight of one output grid cell, used to
    turn sums over query points into L2 integrals.
    """

    benchmark_id: str
    sensors: np.ndarray
    u: np.ndarray
    y: np.ndarray
    s: np.ndarray
    tags: np.ndarray
    seed: int = 0
    cell_weight: float = 1.0
    config: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.benchmark_id not in BENCHMARKS:
            raise ConfigError(f"unknown benchmark {self.benchmark_id!r}")
        self.sensors = np.asarray(self.sensors, dtype=np.float64)
        self.u = np.asarray(self.u, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        self.s = np.asarray(self.s, dtype=np.float64)
        self.tags = np.asarray(self.tags, dtype=np.float64)
        if self.tags.ndim == 1:
            self.tags = self.tags[:, None]
        if self.sensors.ndim != 2 or self.u.ndim != 3 or self.s.ndim != 3:
            raise ShapeError("sensors must be 2-D, u and s 3-D")
        n, m, _ = self.u.shape
        if self.sensors.shape[0] != m:
            raise ShapeError(f"{self.sensors.shape[0]} sensors but u has {m} readings per sample")
        if self.s.shape[0] != n or self.tags.shape[0] != n:
            raise ShapeError("u, s and tags disagree on the sample count")
        p = self.s.shape[1]
        if self.y.ndim == 2:
            ok = self.y.shape[0] == p
        elif self.y.ndim == 3:
            ok = self.y.shape[:2] == (n, p)
        else:
            ok = False
        if not ok:
            raise ShapeError(f"query array shape {self.y.shape} does not fit s {self.s.shape}")

    @property
    def n_samples(self) -> int:
        return self.u.shape[0]

    def __len__(self) -> int:
        return self.n_samples

    @property
    def m(self) -> int:
        return self.u.shape[1]

    @property
    def n_queries(self) -> int:
        return self.s.shape[1]

    @property
    def d_u(self) -> int:
        return self.u.shape[2]

    @property
    def d_s(self) -> int:
        return self.s.shape[2]

    @property
    def d_x(self) -> int:
        return self.sensors.shape[1]

    @property
    def d_y(self) -> int:
        return self.y.shape[-1]

    @property
    def shared_queries(self) -> bool:
        return self.y.ndim == 2

    def queries(self, idx=None) -> np.ndarray:
        """Query points for the selected samples, shared form kept 2-D."""
        if self.shared_queries or idx is None:
            return self.y
        return self.y[idx]

    def __getitem__(self, i: int) -> OperatorSample:
        y = self.y if self.shared_queries else self.y[i]
        return OperatorSample(self.u[i], y, self.s[i], self.tags[i])

    @property
    def samples(self) -> list[OperatorSample]:
        return [self[i] for i in range(self.n_samples)]

    def subset(self, idx) -> "OperatorDataset":
        idx = np.asarray(idx)
        return OperatorDataset(
            self.benchmark_id, self.sensors, self.u[idx],
            self.y if self.shared_queries else self.y[idx],
            self.s[idx], self.tags[idx], self.seed, self.cell_weight, dict(self.config),
        )

    def all_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in (self.sensors, self.u, self.y, self.s, self.tags))
