"""Vessel-segmentation stream."""

from .loss import (
    LossReport,
    WeightMapParams,
    class_weights_from_masks,
    weight_map,
    weighted_xent,
)
from .net import (
    SegNet,
    SegNetConfig,
    TrainResult,
    TrainingDiverged,
    backward,
    forward,
    load_segnet,
    mask_from_probability,
    predict_mask,
    save_segnet,
    train,
    train_from_masks,
    vessel_probability,
)

__all__ = [
    "LossReport",
    "SegNet",
    "SegNetConfig",
    "TrainResult",
    "TrainingDiverged",
    "WeightMapParams",
    "backward",
    "class_weights_from_masks",
    "forward",
    "load_segnet",
    "mask_from_probability",
    "predict_mask",
    "save_segnet",
    "train",
    "train_from_masks",
    "vessel_probability",
    "weight_map",
    "weighted_xent",
]
