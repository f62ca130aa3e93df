"""Branched transport with prescribed couplings: plans, energies, constructions and solvers."""

from .geometry import Network, PolyCurve, double_points, evaluate, is_simple, register, restrict, stopping_time
from .plan import (
    AtomicMeasure,
    Coupling,
    InstanceConfig,
    TrafficPlan,
    alpha_energy,
    alpha_mass,
    check_simple_path,
    check_single_path,
    check_tpc,
    coupling_of,
    decompose_by_products,
    dirac,
    marginals,
    multiplicity,
    product_coupling,
    weighted_length,
)
from .concat import conc_curves, conc_plans, conc_through_delta, glue, triple_concat, triple_concat_parts
from .connectors import (
    GridDensity,
    SubcriticalExponentError,
    ball_cover,
    impl_constant,
    irrigate_from_point,
    mailing_connector,
)
from .competitor import build_competitor
from .solver import (
    BudgetExceeded,
    CandidateGraph,
    SolveResult,
    candidate_graph,
    refine_topology,
    solve_exact,
    solve_local,
)
from .components import (
    ComponentIntervalError,
    NotSinglePathError,
    OpenSetSpec,
    component_multiplicity_check,
    component_optimality_audit,
    connected_components,
    finiteness_experiment,
)
from .harness import StabilityExperiment, generate_instance, run_stability

__version__ = "0.1.0"
