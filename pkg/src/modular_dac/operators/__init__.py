"""Execution semantics of every registered sub-module variant."""
from .boundary import exec_boundary
from .context import PopulationContext
from .multi import exec_multi_strategy, resolve_member
from .population import (
    exec_info_sharing,
    exec_niching,
    exec_pop_reduction,
    exec_restart,
    reduce_partitions,
    restart_triggered,
)
from .pso import exec_pso_update
from .sampling import SmallPopulationWarning, exec_initialization
from .selection import exec_selection, select_indices
from .variation import exec_crossover, exec_mutation

__all__ = [
    "PopulationContext",
    "SmallPopulationWarning",
    "exec_boundary",
    "exec_crossover",
    "exec_info_sharing",
    "exec_initialization",
    "exec_multi_strategy",
    "exec_mutation",
    "exec_niching",
    "exec_pop_reduction",
    "exec_pso_update",
    "exec_restart",
    "exec_selection",
    "reduce_partitions",
    "resolve_member",
    "restart_triggered",
    "select_indices",
]
