"""Growth-search space: block graphs, network specs and their materialization."""

from .block import (
    ALL_OPS,
    Add,
    BlockGraph,
    Concat,
    Edge,
    OpKind,
    Series,
    branching,
    random_growth,
    splitting,
)
from .materialize import GrowthNetwork, materialize
from .network import (
    LedgerItem,
    NetworkSpec,
    StackStats,
    baseline_spec,
    conv_cost,
    grow,
    parameter_count,
    parameter_ledger,
    random_model,
    structure_stats,
)
