"""Droop gain design and closed-loop simulation for radial distribution feeders.

The package models a feeder as a rooted tree, derives the squared-voltage
sensitivity matrices of the linearized power flow, designs stable
proportional volt-var-watt gain schedules (a closed-form benchmark, a
min-max benchmark, and a multi-period loss-minimizing program aware of
battery limits), executes them in a receding-horizon loop, and validates
everything against a nonlinear AC power-flow plant.
"""

from .control import (
    ClosedLoop,
    DynamicTrace,
    GainVector,
    Saturation,
    closed_loop,
    frobenius_gh,
    local_step,
    simulate_dynamics,
    spectral_radius,
    steady_state,
)
from .designer import (
    DesignConfig,
    Forecast,
    GainSchedule,
    build_opfpc,
    design_direct,
    design_opfpc,
    design_optbench,
    direct_gain_vector,
    extract_gains,
)
from .network import (
    Feeder,
    FeederError,
    IncidenceMatrix,
    LineSegment,
    SensitivityMatrices,
    build_incidence,
    build_rx,
    path_to_root,
    validate_radial,
)
from .powerflow import (
    AcState,
    InjectionProfile,
    LinearState,
    ac_power_flow,
    baseline_deviation,
    branch_flows,
    lindistflow_solve,
    losses,
    substation_power,
    voltage_from_deviation,
)
from .program import ConvexProgram, Solution, VariableRef, solve
from .rho import (
    HorizonScheme,
    RunConfig,
    Scenario,
    ScenarioTrace,
    build_time_grid,
    metrics,
    rho_step,
    run_rho,
)
from .storage import (
    BatterySpec,
    EnergyMatrix,
    OctagonConstraint,
    TimeGrid,
    check_feasible,
    energy_matrix,
    soc_trajectory,
)

__version__ = "0.1.0"
