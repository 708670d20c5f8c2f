"""Shapley-based attribution of changes in aggregated measures across
sub-cubes and sub-measures."""

from .cube import (
    AggregatorKind,
    RecordStore,
    RecordSubset,
    aggregate_cell,
    build_observation_matrix,
    check_additivity,
    partition_store,
    read_csv,
    select,
)
from .expr import MeasureSpec, classify, differentiate, evaluate, parse_measure, to_text
from .gam import (
    EngineConfig,
    GamGame,
    ReferenceSpec,
    attribute,
    attribute_aumann_ratio,
    attribute_aumann_riemann,
    attribute_linear,
    set_function,
    shapley_exact,
    shapley_kernel,
    shapley_permutation,
)
from .model import (
    CoalitionMask,
    ContributionMatrix,
    CubePredicate,
    DrillPartition,
    ObservationMatrix,
    marginalize,
    partition,
    rank_subcubes,
    validate_pair,
)
from .nongam import NonGamGame, attribute_nongam, build_coalition_dataset, set_function_nongam

__version__ = "0.1.0"
