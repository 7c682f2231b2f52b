"""Numerical checks of Michael-Simon type Sobolev inequalities under
intermediate Ricci curvature bounds."""

__version__ = "0.1.0"

from .geometry import (  # noqa: E402
    MetricChart,
    curvature_packet,
    make_chart,
    metric_at,
    min_ric_k_sample,
    ric_k,
    sectional,
    unit_ball_volume,
)
from .ode import AsymptoticProfile, compute_b0_b1, solve_h, solve_linear_second_order  # noqa: E402
from .scenario import Scenario, load_config, parse_config  # noqa: E402
from .verify import (  # noqa: E402
    InequalityReport,
    run_avr,
    run_curvature_audit,
    run_isoperimetric,
    run_ray_audit,
    run_verify,
)
