"""ResNet builders and importance-based neuron pruning."""

from .resnet import (
    ResNet, ResNetSpec, build_resnet, build_sp_resnet, resnet_ledger, resnet_parameter_count,
    resnet_spec,
)
from .search import (
    PruneConfig, PruneRecord, PruneResult, PruneState, finetune, frozen_masks, history_csv,
    importance_l2, importance_table, neural_composition, prune_neuron, prune_step, pruning_search,
)

__all__ = [
    "ResNet", "ResNetSpec", "build_resnet", "build_sp_resnet", "resnet_ledger",
    "resnet_parameter_count", "resnet_spec", "PruneConfig", "PruneRecord", "PruneResult",
    "PruneState", "finetune", "frozen_masks", "history_csv", "importance_l2", "importance_table",
    "neural_composition", "prune_neuron", "prune_step", "pruning_search",
]
