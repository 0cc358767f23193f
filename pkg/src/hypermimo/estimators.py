"""scikit-learn style wrappers around the three learning strategies.

Every estimator is fitted offline (``fit``), adapts to one transmission block
at a time (``adapt``) and detects the block's information symbols
(``predict``). Hyperparameters are constructor arguments, so ``get_params`` /
``set_params`` / ``clone`` work as usual.
"""

from __future__ import annotations

from typing import Mapping

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .adaptation import (
    Dataset,
    HyperTrainConfig,
    TrainConfig,
    hypernet_adapt,
    hypernet_train,
    joint_train,
    online_adapt,
)
from .channel import TransmissionBlock
from .complexity import ComplexityLedger
from .deepsic import ReceiverParams, param_count, predict as sic_predict


class MissingCheckpointError(LookupError):
    pass


def check_block(block: TransmissionBlock, N: int | None = None, k_max: int | None = None) -> TransmissionBlock:
    """Validate shapes and symbol alphabet of a block before it reaches a receiver."""
    if not isinstance(block, TransmissionBlock):
        raise TypeError(f"expected a TransmissionBlock, got {type(block).__name__}")
    K = block.K
    if block.pilots_s.shape[1:] != (K,) or block.info_s.shape[1:] != (K,):
        raise ValueError(f"symbol matrices must have K={K} columns")
    if block.pilots_s.shape[0] != block.pilots_y.shape[0] or block.info_s.shape[0] != block.info_y.shape[0]:
        raise ValueError("symbols and observations have different lengths")
    if N is not None and block.pilots_y.shape[1] != N:
        raise ValueError(f"block has {block.pilots_y.shape[1]} antennas, receiver expects {N}")
    if k_max is not None and K > k_max:
        raise ValueError(f"block has K={K} users, more than K_max={k_max}")
    for arr in (block.pilots_y, block.info_y):
        if not np.all(np.isfinite(arr)):
            raise ValueError("observations contain NaN or Inf")
    if not np.all(np.isin(block.pilots_s, (1.0, -1.0))):
        raise ValueError("pilot symbols must be BPSK (+1/-1)")
    return block


def check_datasets(datasets: Mapping[int, Dataset]) -> Mapping[int, Dataset]:
    if not datasets:
        raise ValueError("no training datasets given")
    Ns = {ds.N for ds in datasets.values()}
    if len(Ns) != 1:
        raise ValueError(f"datasets disagree on N: {sorted(Ns)}")
    for K, ds in datasets.items():
        if ds.K != K:
            raise ValueError(f"dataset stored under K={K} holds K={ds.K}")
    return datasets


class _ReceiverMixin:
    Q: int

    def adapt(self, block, ledger=None) -> ReceiverParams:  # pragma: no cover - interface
        raise NotImplementedError

    def predict(self, block: TransmissionBlock, ledger: ComplexityLedger | None = None) -> np.ndarray:
        Theta = self.adapt(block, ledger)
        if ledger is not None:
            ledger.record_inference(param_count(Theta.N, Theta.K), block.n_info, Theta.K)
        return sic_predict(Theta, block.info_y, self.Q)

    def score(self, block: TransmissionBlock) -> float:
        """1 - SER on the block's information symbols."""
        return 1.0 - float(np.mean(self.predict(block) != block.info_s))


class JointReceiver(_ReceiverMixin, BaseEstimator):
    """One static DeepSIC per user count, trained offline on pooled data."""

    def __init__(self, Q=3, lr=1e-3, iterations=100, batch_size=512, regime="sequential", random_state=0):
        self.Q = Q
        self.lr = lr
        self.iterations = iterations
        self.batch_size = batch_size
        self.regime = regime
        self.random_state = random_state

    def _train_config(self) -> TrainConfig:
        return TrainConfig(self.lr, self.iterations, self.batch_size, self.Q, self.regime, self.random_state)

    def fit(self, datasets: Mapping[int, Dataset], y=None):
        check_datasets(datasets)
        self.receivers_ = joint_train(datasets, self._train_config())
        self.N_ = next(iter(datasets.values())).N
        return self

    def set_receivers(self, receivers: Mapping[int, ReceiverParams]):
        """Install previously trained weights (e.g. loaded from a checkpoint)."""
        self.receivers_ = dict(receivers)
        self.N_ = next(iter(receivers.values())).N
        return self

    def adapt(self, block: TransmissionBlock, ledger=None) -> ReceiverParams:
        check_is_fitted(self, "receivers_")
        check_block(block, self.N_)
        if block.K not in self.receivers_:
            raise MissingCheckpointError(f"no joint checkpoint for K={block.K}")
        return self.receivers_[block.K]

    @property
    def n_checkpoints(self) -> int:
        check_is_fitted(self, "receivers_")
        return len(self.receivers_)


class OnlineReceiver(_ReceiverMixin, BaseEstimator):
    """Retrains on each block's pilots, warm-starting while K stays the same."""

    def __init__(self, Q=3, lr=1e-3, iterations=100, batch_size=512, regime="sequential", random_state=0):
        self.Q = Q
        self.lr = lr
        self.iterations = iterations
        self.batch_size = batch_size
        self.regime = regime
        self.random_state = random_state

    def fit(self, datasets=None, y=None):
        """Nothing is learned offline; this only resets the warm-start state."""
        self.previous_ = None
        return self

    def adapt(self, block: TransmissionBlock, ledger=None) -> ReceiverParams:
        if not hasattr(self, "previous_"):
            self.fit()
        check_block(block)
        cfg = TrainConfig(self.lr, self.iterations, self.batch_size, self.Q, self.regime, self.random_state)
        rng = np.random.default_rng([self.random_state, block.t])
        self.previous_ = online_adapt(self.previous_, block, cfg, rng, ledger)
        return self.previous_


class HypernetReceiver(_ReceiverMixin, BaseEstimator):
    """Generates every user's module from pilot-based channel features; no online training."""

    def __init__(
        self,
        k_max=6,
        Q=3,
        lr=5e-4,
        iterations=25,
        n_blocks=200,
        batch_size=512,
        deep_supervision=True,
        random_state=0,
    ):
        self.k_max = k_max
        self.Q = Q
        self.lr = lr
        self.iterations = iterations
        self.n_blocks = n_blocks
        self.batch_size = batch_size
        self.deep_supervision = deep_supervision
        self.random_state = random_state

    def fit(self, datasets: Mapping[int, Dataset], y=None):
        check_datasets(datasets)
        cfg = HyperTrainConfig(
            self.lr, self.iterations, self.n_blocks, self.batch_size, self.Q, self.deep_supervision, self.random_state
        )
        self.hypernet_, self.loss_curve_ = hypernet_train(datasets, self.k_max, cfg)
        return self

    def set_hypernet(self, phi):
        if phi.k_max != self.k_max:
            raise ValueError(f"hypernetwork was built for K_max={phi.k_max}, estimator has {self.k_max}")
        self.hypernet_ = phi
        return self

    def adapt(self, block: TransmissionBlock, ledger=None) -> ReceiverParams:
        check_is_fitted(self, "hypernet_")
        check_block(block, self.hypernet_.N, self.k_max)
        return hypernet_adapt(self.hypernet_, block, ledger)
