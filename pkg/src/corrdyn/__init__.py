"""corrdyn: cluster-cumulant correlation dynamics at desk scale.

Evolved n-particle correlation functions expand as signed sums over set
partitions of cumulants of Hamiltonian flow operators.  This package builds
that expansion exactly for small particle numbers, the transforms relating
correlations to probability densities, and a verification harness for every
algebraic identity and norm estimate the construction obeys.
"""

from .dynamics import (
    CallablePhaseFunction,
    FlowSolver,
    GaussianMixture,
    GaussianPair,
    GaussianTriple,
    HarmonicPair,
    HarmonicTrap,
    PhaseConfiguration,
    PhaseFunction,
    PhasePoint,
    PotentialFamily,
    apply_flow_operator,
    apply_liouville,
    flow_backward,
    hamiltonian,
    random_gaussian_mixture,
)
from .errors import (
    ConfigError,
    ContractError,
    CorrdynError,
    FlowDivergenceError,
    SizeLimitError,
)
from .hierarchy import (
    CorrelationSequence,
    DistributionSequence,
    EvaluationContext,
    D_from_g,
    apply_hierarchy_generator,
    compose_evolution,
    cumulant_apply,
    evolved_g1,
    g_from_D,
    hierarchy_generator_terms,
    scattering_cumulant_apply,
    solve_g,
    solve_g_chaos,
    solve_g_via_D,
    time_slice,
)
from .partitions import (
    BlockPartition,
    Partition,
    SubsetSelection,
    enumerate_block_partitions,
    enumerate_partitions,
    enumerate_subset_selections,
    merged_labels,
    mobius_coefficient,
)
from .config import RunConfig
from .verify import (
    McQuadrature,
    PropertyReport,
    check_isometry,
    check_norm_bound,
    mc_l1_norm,
    run_suite,
)

__version__ = "0.1.0"
