"""Training-free temporal grounding of decomposed motion queries."""

from ._mground import (
    MgroundError,
    __version__,
    gradcheck,
    ground,
    mean_ap,
    rule_based_split,
    segment_iou,
    synth_instance,
)

__all__ = [
    "MgroundError",
    "__version__",
    "gradcheck",
    "ground",
    "mean_ap",
    "rule_based_split",
    "segment_iou",
    "synth_instance",
]
