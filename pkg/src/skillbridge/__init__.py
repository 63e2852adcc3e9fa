"""Coupled conditional movement primitives for transferring skills between a planar arm and a mobile robot."""

from .cnmp import (BlendWeights, CoupledModel, DemonstrationPair, ObservationSet, Trajectory, coupled_loss,
                   query_trajectory)
from .robots import ARM, MOBILE, ArmSpec, Dataset, make_count_dataset, make_dataset, make_split_dataset
from .training import TrainConfig, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "ARM", "MOBILE", "ArmSpec", "BlendWeights", "CoupledModel", "Dataset", "DemonstrationPair", "ObservationSet",
    "TrainConfig", "Trajectory", "coupled_loss", "load_checkpoint", "make_count_dataset", "make_dataset",
    "make_split_dataset", "query_trajectory", "save_checkpoint", "train",
]
