"""Weighted per-block cost accounting for training, inference and weight generation."""

from __future__ import annotations

import threading
from dataclasses import dataclass, field


@dataclass
class ComplexityLedger:
    """Accumulates abstract cost units.

    One training unit is one parameter touched by one pilot symbol, weighted by
    ``alpha_t``; inference units are weighted by ``alpha_i``. Hypernetwork runs
    count as inference; least-squares estimation costs ``c_ls * N * B_pilot * K``.
    """

    alpha_t: float = 100.0
    alpha_i: float = 1.0
    c_ls: float = 1.0
    training: float = 0.0
    inference: float = 0.0
    hyper: float = 0.0
    ls: float = 0.0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def _add(self, name: str, amount: float) -> None:
        if amount < 0:
            raise ValueError("cost increments must be non-negative")
        with self._lock:
            setattr(self, name, getattr(self, name) + amount)

    def record_training(self, module_size: int, n_pilot: int, K: int) -> float:
        amount = self.alpha_t * module_size * n_pilot * K
        self._add("training", amount)
        return amount

    def record_inference(self, module_size: int, n_info: int, K: int) -> float:
        amount = self.alpha_i * module_size * n_info * K
        self._add("inference", amount)
        return amount

    def record_hyper(self, hyper_size: int, K: int) -> float:
        amount = self.alpha_i * hyper_size * K
        self._add("hyper", amount)
        return amount

    def record_ls(self, N: int, n_pilot: int, K: int) -> float:
        amount = self.c_ls * N * n_pilot * K
        self._add("ls", amount)
        return amount

    @property
    def online_work(self) -> float:
        """Everything except training: inference, weight generation and estimation."""
        return self.inference + self.hyper + self.ls

    @property
    def total(self) -> float:
        return self.training + self.online_work

    def as_dict(self) -> dict:
        return {
            "alpha_t": self.alpha_t,
            "alpha_i": self.alpha_i,
            "c_ls": self.c_ls,
            "training": self.training,
            "inference": self.inference,
            "hyper": self.hyper,
            "ls": self.ls,
            "total": self.total,
        }


def complexity_ratio(hyper: ComplexityLedger, online: ComplexityLedger) -> float:
    if online.total == 0:
        raise ZeroDivisionError("online ledger is empty")
    return hyper.total / online.total


def closed_form_ratio(alpha_t, alpha_i, module_size, hyper_size, n_pilot, n_info, N, c_ls=1.0) -> float:
    """Per-block hyper/online cost ratio with the LS term taken as c_ls * N * B_pilot."""
    num = alpha_i * (module_size * n_info + hyper_size) + c_ls * N * n_pilot
    den = (alpha_t * n_pilot + alpha_i * n_info) * module_size
    return num / den


def approx_ratio(alpha_t, alpha_i, module_size, hyper_size, n_pilot, n_info) -> float:
    """Simplification valid when training dominates detection and LS is negligible."""
    return (alpha_i * n_info) / (alpha_t * n_pilot) * (1 + hyper_size / (module_size * n_info))
