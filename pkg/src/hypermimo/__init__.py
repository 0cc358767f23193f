"""Hypernetwork-adapted DeepSIC receivers for block-fading MIMO links."""

from .adaptation import (
    HypernetParams,
    hypernet_adapt,
    hypernet_train,
    joint_train,
    ls_estimate,
    online_adapt,
)
from .complexity import ComplexityLedger
from .deepsic import ReceiverParams, param_count
from .estimators import HypernetReceiver, JointReceiver, OnlineReceiver
from .harness import ExperimentConfig, run_experiment

__all__ = [
    "ComplexityLedger",
    "ExperimentConfig",
    "HypernetParams",
    "HypernetReceiver",
    "JointReceiver",
    "OnlineReceiver",
    "ReceiverParams",
    "hypernet_adapt",
    "hypernet_train",
    "joint_train",
    "ls_estimate",
    "online_adapt",
    "param_count",
    "run_experiment",
]

__version__ = "0.1.0"
