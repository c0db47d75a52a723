"""Training-free token pruning for sliced 3D volumes.

Slices are first filtered against a moving anchor, then each surviving slice
keeps the smallest set of high-attention tokens reaching a mass threshold,
with the leftovers merged into a few contextual tokens.
"""

from .core import (
    ConfigError,
    DataError,
    FormatError,
    ImportanceVector,
    PrimarySet,
    PruneConfig,
    PruneResult,
    PrunerError,
    SliceResult,
    SliceSelection,
    StageError,
    TruncationError,
    Volume,
    validate_config,
)
from .dins import fixed_ratio_select, nucleus_select
from .iaf import iaf_filter, slice_l1_distance, uniform_slice_sample
from .merge import MergeOutcome, bipartite_merge
from .pipeline import compare_methods, prune_volume, run_ablation, tau_sweep
from .saliency import (
    HeadStack,
    aggregate_importance,
    head_attention,
    temperature_softmax,
    toy_encode,
)

__version__ = "0.1.0"
