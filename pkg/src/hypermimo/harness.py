"""Experiment orchestration: block streams, per-method runs, SER and cost reports."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .adaptation import Dataset, hyper_size, make_datasets
from .channel import ConfigError, LinkConfig, SnrProfileConfig, iter_blocks, load_trace
from .complexity import ComplexityLedger, closed_form_ratio, complexity_ratio
from .deepsic import param_count
from .estimators import HypernetReceiver, JointReceiver, OnlineReceiver

log = logging.getLogger(__name__)

METHODS = ("joint", "online", "hyper")
CSV_HEADER = ["t", "K", "ser", "train_units", "infer_units", "wall_ms"]


@dataclass
class ExperimentConfig:
    N: int = 8
    k_max: int = 6
    users: Any = 4  # int, per-block list, or {"choices": [...]}
    T: int = 100
    n_pilot: int = 800
    n_info: int = 15200
    channel: str = "synthetic"
    trace_path: str | None = None
    trace_snr_db: float = 12.0
    snr: SnrProfileConfig = field(default_factory=SnrProfileConfig)
    offline_snr: SnrProfileConfig | None = None
    method: str = "hyper"
    seed: int = 0
    Q: int = 3
    alpha_t: float = 100.0
    alpha_i: float = 1.0
    c_ls: float = 1.0
    train_symbols_per_k: int = 100_000
    train_block_len: int = 1000
    joint: dict = field(default_factory=lambda: {"lr": 1e-3, "iterations": 100, "batch_size": 512})
    online: dict = field(default_factory=lambda: {"lr": 1e-3, "iterations": 100, "batch_size": 512})
    hyper: dict = field(default_factory=lambda: {"lr": 5e-4, "iterations": 25, "n_blocks": 200, "batch_size": 512})

    def __post_init__(self):
        if isinstance(self.snr, dict):
            self.snr = SnrProfileConfig(**self.snr)
        if isinstance(self.offline_snr, dict):
            self.offline_snr = SnrProfileConfig(**self.offline_snr)
        if self.T < 1:
            raise ConfigError("T must be >= 1")
        if not 1 <= self.k_max <= self.N:
            raise ConfigError(f"need N >= K_max >= 1, got N={self.N}, K_max={self.k_max}")
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.channel == "trace" and not self.trace_path:
            raise ConfigError("trace channel needs trace_path")
        if self.channel == "synthetic":
            bad = [K for K in self.user_values() if not 1 <= K <= self.k_max]
            if bad:
                raise ConfigError(f"user counts {bad} outside 1..K_max={self.k_max}")

    # -- derived pieces --------------------------------------------------

    def user_values(self) -> list[int]:
        u = self.users
        if isinstance(u, int):
            return [u]
        if isinstance(u, dict):
            if "choices" not in u:
                raise ConfigError("users dict needs a 'choices' list")
            return [int(k) for k in u["choices"]]
        return [int(k) for k in u]

    def schedule(self) -> list[int]:
        u = self.users
        if isinstance(u, int):
            return [u] * self.T
        if isinstance(u, dict):
            rng = np.random.default_rng([self.seed, 31])
            return [int(k) for k in rng.choice(self.user_values(), size=self.T)]
        if len(u) != self.T:
            raise ConfigError(f"user schedule has {len(u)} entries for T={self.T} blocks")
        return [int(k) for k in u]

    def link(self) -> LinkConfig:
        return LinkConfig(
            N=self.N,
            k_max=self.k_max,
            n_pilot=self.n_pilot,
            n_info=self.n_info,
            channel=self.channel,
            snr=self.snr,
            trace_snr_db=self.trace_snr_db,
        )

    def offline_link(self) -> LinkConfig:
        link = self.link()
        link = replace(link, channel="synthetic")
        return replace(link, snr=self.offline_snr) if self.offline_snr is not None else link

    def to_dict(self) -> dict:
        d = asdict(self)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as err:
            raise ConfigError(str(err)) from None


def load_config(path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as err:
        raise ConfigError(f"cannot read config {path}: {err}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    return ExperimentConfig.from_dict(raw)


# -- pieces a run needs ---------------------------------------------------


def block_stream(cfg: ExperimentConfig):
    trace = None
    if cfg.channel == "trace":
        trace = load_trace(cfg.trace_path, k_max=cfg.k_max, N=cfg.N)
        if not trace:
            raise ConfigError(f"trace {cfg.trace_path} holds no blocks")
    return iter_blocks(cfg.link(), cfg.schedule(), cfg.seed, trace)


def offline_datasets(cfg: ExperimentConfig) -> dict[int, Dataset]:
    return make_datasets(
        cfg.offline_link(),
        range(2, cfg.k_max + 1),
        cfg.train_symbols_per_k,
        cfg.train_block_len,
        seed=cfg.seed + 1,
    )


def make_estimator(cfg: ExperimentConfig, method: str | None = None):
    method = method or cfg.method
    if method == "joint":
        return JointReceiver(Q=cfg.Q, random_state=cfg.seed, **cfg.joint)
    if method == "online":
        return OnlineReceiver(Q=cfg.Q, random_state=cfg.seed, **cfg.online)
    if method == "hyper":
        return HypernetReceiver(k_max=cfg.k_max, Q=cfg.Q, random_state=cfg.seed, **cfg.hyper)
    raise ConfigError(f"unknown method {method!r}")


# -- running ----------------------------------------------------------------


@dataclass
class BlockResult:
    t: int
    K: int
    ser: float
    errors: int
    n_info: int
    train_units: float
    infer_units: float
    wall_ms: float


def ser(estimates: np.ndarray, truth: np.ndarray) -> float:
    """Fraction of symbol entries that differ."""
    estimates, truth = np.asarray(estimates), np.asarray(truth)
    if estimates.shape != truth.shape:
        raise ValueError(f"shape mismatch: {estimates.shape} vs {truth.shape}")
    if truth.size == 0:
        return 0.0
    return float(np.count_nonzero(estimates != truth)) / truth.size


def run_experiment(cfg: ExperimentConfig, estimator=None, method: str | None = None, blocks=None):
    """Simulate cfg.T blocks with one (already fitted) estimator.

    Returns ``(results, summary, ledger)``.
    """
    method = method or cfg.method
    if estimator is None:
        estimator = make_estimator(cfg, method)
        if method == "online":
            estimator.fit()
        else:
            raise ConfigError(f"method {method!r} needs a fitted estimator or checkpoint")
    ledger = ComplexityLedger(cfg.alpha_t, cfg.alpha_i, cfg.c_ls)
    results: list[BlockResult] = []
    for block in blocks if blocks is not None else block_stream(cfg):
        before_t, before_i = ledger.training, ledger.online_work
        start = time.perf_counter()
        s_hat = estimator.predict(block, ledger)
        wall = (time.perf_counter() - start) * 1e3
        errors = int(np.count_nonzero(s_hat != block.info_s))
        results.append(
            BlockResult(
                block.t,
                block.K,
                ser(s_hat, block.info_s),
                errors,
                block.n_info,
                ledger.training - before_t,
                ledger.online_work - before_i,
                wall,
            )
        )
        log.debug("%s t=%d K=%d ser=%.4f %.1fms", method, block.t, block.K, results[-1].ser, wall)
    return results, summarize(results, ledger, method), ledger


def summarize(results: Sequence[BlockResult], ledger: ComplexityLedger, method: str) -> dict:
    symbols = sum(r.n_info * r.K for r in results)
    errors = sum(r.errors for r in results)
    return {
        "method": method,
        "blocks": len(results),
        # symbol-weighted: each block counts in proportion to K[t] * B_info
        "aggregate_ser": errors / symbols if symbols else 0.0,
        "mean_block_ser": float(np.mean([r.ser for r in results])) if results else 0.0,
        "total_train_units": ledger.training,
        "total_infer_units": ledger.online_work,
        "ledger": ledger.as_dict(),
        "mean_wall_ms": float(np.mean([r.wall_ms for r in results])) if results else 0.0,
        "user_counts": sorted({r.K for r in results}),
    }


def ratio_report(cfg: ExperimentConfig, hyper: ComplexityLedger, online: ComplexityLedger, K: int) -> dict:
    """Ledger-measured hyper/online cost ratio next to the closed form at user count K."""
    return {
        "measured": complexity_ratio(hyper, online),
        "closed_form": closed_form_ratio(
            cfg.alpha_t,
            cfg.alpha_i,
            param_count(cfg.N, K),
            hyper_size(cfg.N, cfg.k_max) - 2 * cfg.N,
            cfg.n_pilot,
            cfg.n_info,
            cfg.N,
            cfg.c_ls,
        ),
    }


def emit_results(results: Sequence[BlockResult], summary: dict, cfg: ExperimentConfig, out_dir) -> list[Path]:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        csv_path = out / "results.csv"
        with csv_path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_HEADER)
            for r in results:
                w.writerow([r.t, r.K, repr(r.ser), repr(r.train_units), repr(r.infer_units), f"{r.wall_ms:.3f}"])
        summary_path = out / "summary.json"
        summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        cfg_path = out / "config.resolved.json"
        cfg_path.write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as err:
        raise OSError(f"cannot write results to {out}: {err}") from err
    return [csv_path, summary_path, cfg_path]
