"""Shuffled mirror descent with Bregman kernels, diagnostics and experiment tooling."""

from __future__ import annotations

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:
    __version__ = "0.1.0"

from .exceptions import *  # noqa: E402,F401,F403
from .kernels import Kernel, burg, fermi_dirac, log_barrier, power, quadratic, shannon, stack  # noqa: E402
from .compose import combine_conic, compose_affine, gamma_constant  # noqa: E402
from .sampling import SamplingScheme, stream  # noqa: E402
from .problems import DatasetSpec, FiniteSumProblem, make_problem  # noqa: E402
from .solver import RunResult, SolverConfig, StepSchedule, run, theoretical_step_cap  # noqa: E402

__all__ = [
    "Kernel", "burg", "fermi_dirac", "log_barrier", "power", "quadratic", "shannon", "stack",
    "combine_conic", "compose_affine", "gamma_constant",
    "SamplingScheme", "stream",
    "DatasetSpec", "FiniteSumProblem", "make_problem",
    "RunResult", "SolverConfig", "StepSchedule", "run", "theoretical_step_cap",
]
