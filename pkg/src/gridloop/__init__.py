"""gridloop: online feedback optimization for multi-area transmission grids.

A transmission grid simulated as an algebraic plant, single-area and
multi-area feedback-optimization controllers in closed loop, and empirical
certification of the resulting optimal or competitive operating points.
"""

from . import errors
from .netmodel import (
    AreaPartition,
    Branch,
    Bus,
    BusKind,
    Generator,
    GridCase,
    build_admittance,
    emit_json_case,
    parse_json_case,
    parse_matpower_case,
    validate_partition,
)
from .powerflow import (
    Disturbance,
    GridPlant,
    InputLayout,
    PFOptions,
    VoltageState,
    compute_outputs,
    finite_diff_sensitivity,
    sensitivity,
    solve_pf,
)
from .qp import QpProblem, QpSolution, project_box_polytope, solve_qp
from .ofo import (
    ControllerConfig,
    ControllerMode,
    CostModel,
    DualState,
    PenaltyModel,
    cost_gradients,
    penalty_gradient_step,
    primal_dual_step,
    projected_descent_step,
)
from .multiarea import (
    AreaController,
    GameState,
    Gains,
    NashCertificate,
    certify_nash,
    check_step_sizes,
    estimate_cocoercivity,
    fb_operator,
    local_gradient,
    multiarea_step,
    pseudo_gradient,
)
from .sim import (
    ComparisonReport,
    Scenario,
    SimLog,
    emit_series,
    load_scenario,
    run_closed_loop,
    run_comparison,
)

__version__ = "0.1.0"
