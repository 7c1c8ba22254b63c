"""Numerical laboratory for sphere-valued harmonic map heat flows.

Penalized (Ginzburg-Landau) and projected heat flows on staircase balls and
boxes, with backward-kernel energy diagnostics, singular-candidate scans, and
a stereographic chart monitor.
"""

from sphereflow.grid import (
    BOUNDARY,
    EXTERIOR,
    INTERIOR,
    DomainGrid,
    DomainSpec,
    SphereField,
    ball_mask,
    build_grid,
    domain_measure,
    gradient_norm_sq,
    gradient_norm_sq_values,
    gradient_values,
    integrate,
    laplacian,
    laplacian_values,
    load_field,
    save_field,
)
from sphereflow.flow import (
    BlowUpError,
    CflError,
    EnergyCheckReport,
    FlowConfig,
    FlowError,
    FlowTrace,
    StepLog,
    glhf_step,
    global_energy_check,
    hhf_projected_step,
    run_flow,
    step,
    synthetic_trace,
    weak_residual,
)
from sphereflow.chart import (
    ChartField,
    MonitorReport,
    chart_gradient_density,
    from_chart,
    one_sided_monitor,
    to_chart,
)
from sphereflow.harness import (
    ComparisonReport,
    ExtensionError,
    Scenario,
    compare_glhf_hhf,
    harmonic_extension,
    make_initial,
    spacetime_l2_distance,
)
from sphereflow.diagnostics import (
    BackwardKernel,
    EnergyDensityField,
    EpsilonRegularityReport,
    HolderReport,
    HybridReport,
    MonotonicityReport,
    ReversePoincareReport,
    SingularCandidateSet,
    energy_density,
    epsilon_regularity_report,
    holder_time_modulus,
    hybrid_check,
    kernel_weighted_energy,
    monotonicity_check,
    penalty_integral,
    reverse_poincare_check,
    scaled_energy_density,
    singular_set,
    write_reports,
)

__version__ = "0.1.0"
