"""Benchmark generators and the OPDS container."""

from .advection import AdvectionConfig, advection_solution, gaussian_bump, gen_advection
from .antiderivative import AntiderivativeConfig, gen_antiderivative
from .opds import read_dataset, write_dataset
from .shallow_water import (
    ShallowWaterConfig,
    ShallowWaterState,
    gen_shallow_water,
    sw_initial_state,
    sw_solve,
    sw_step_lax_friedrichs,
)
from .types import BENCHMARKS, OperatorDataset, OperatorSample

__all__ = [
    "AdvectionConfig", "AntiderivativeConfig", "BENCHMARKS", "OperatorDataset",
    "OperatorSample", "ShallowWaterConfig", "ShallowWaterState", "advection_solution",
    "gaussian_bump", "gen_advection", "gen_antiderivative", "gen_shallow_water",
    "read_dataset", "sw_initial_state", "sw_solve", "sw_step_lax_friedrichs", "write_dataset",
]
