"""Discrete-event simulator of a virtualized multi-core host built around
a mixed-criticality vCPU scheduling core (periodic servers, EDF with
virtual deadlines, LO/HI mode switching), with plain-EDF and credit-style
baselines, first-fit placement, and a tail-latency metrics pipeline."""

from .config import ConfigError, load_scenario, scenario_to_toml
from .engine import PlacementRejected, Simulation, run
from .mcs import (
    HI,
    LO,
    AdmissionResult,
    CriticalityLevel,
    InfeasibleError,
    PCpuMode,
    PCpuState,
    SpecError,
    UtilSummary,
    VCpuRuntime,
    VCpuSpec,
    admission_test,
    compute_scaling_factor,
    compute_utilizations,
    virtual_deadline,
)
from .metrics import cpu_shares, deadline_misses, idle_stats, percentile, summarize
from .placement import PlacementPlan, admit_vm, first_fit_assign
from .scenario import Scenario, VmSpec, make_vm
from .workloads import (
    DutyCycleCpu,
    FiniteWork,
    PhasedCpu,
    PoissonRequests,
    poisson_arrivals,
)

__version__ = "0.1.0"
