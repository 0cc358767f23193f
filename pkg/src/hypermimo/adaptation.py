"""Learning strategies for DeepSIC: joint offline, per-block online, and hypernetwork.

The hypernetwork path turns pilots into a least-squares channel estimate,
builds one fixed-size context vector per user and maps each through an MLP
whose outputs are that user's module weights.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .autodiff import Adam, Tensor, affine, concat, cross_entropy, no_grad, parameter, relu, stack
from .channel import LinkConfig, TransmissionBlock, block_rng, make_block, snr_profile
from .complexity import ComplexityLedger
from .deepsic import (
    ModuleParams,
    ReceiverParams,
    init_module,
    init_params,
    module_forward,
    param_count,
    sic_forward,
)

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
HYPER_HIDDEN = (64, 32)


class SingularPilotError(np.linalg.LinAlgError):
    pass


def labels_of(s: np.ndarray) -> np.ndarray:
    """BPSK symbol -> constellation index (+1 -> 0, -1 -> 1)."""
    return (np.asarray(s) < 0).astype(np.intp)


# -- least squares and embeddings ---------------------------------------


def ls_estimate(pilots_s: np.ndarray, pilots_y: np.ndarray, max_cond: float = 1e12) -> np.ndarray:
    """(s^T s)^-1 s^T y; row l is the length-N signature of user l."""
    s = np.atleast_2d(np.asarray(pilots_s, dtype=np.float64))
    y = np.atleast_2d(np.asarray(pilots_y, dtype=np.float64))
    if s.shape[0] != y.shape[0]:
        raise ValueError(f"{s.shape[0]} pilot symbols but {y.shape[0]} observations")
    if s.shape[0] < s.shape[1]:
        raise SingularPilotError(f"{s.shape[0]} pilots cannot resolve {s.shape[1]} users")
    gram = s.T @ s
    if np.linalg.cond(gram) > max_cond:
        raise SingularPilotError("pilot Gram matrix is rank deficient")
    return np.linalg.solve(gram, s.T @ y)


def build_user_embedding(H_hat, k: int, K: int, k_max: int, e_self: Tensor, e_pad: Tensor) -> Tensor:
    """Context of user ``k`` (1-indexed): K_max segments of length N.

    Segment l is the estimated signature of user l when l != k and l <= K,
    ``e_self`` when l == k and ``e_pad`` for absent users l > K.
    """
    if not 1 <= k <= K <= k_max:
        raise ValueError(f"need 1 <= k <= K <= K_max, got k={k}, K={K}, K_max={k_max}")
    H_hat = np.asarray(H_hat, dtype=np.float64)
    segments = []
    for l in range(1, k_max + 1):
        if l == k:
            segments.append(e_self)
        elif l <= K:
            segments.append(Tensor(H_hat[l - 1]))
        else:
            segments.append(e_pad)
    return concat(segments, axis=0)


# -- hypernetwork -------------------------------------------------------


@dataclass
class HypernetParams:
    N: int
    k_max: int
    W1: Tensor
    b1: Tensor
    W2: Tensor
    b2: Tensor
    W3: Tensor
    b3: Tensor
    e_self: Tensor
    e_pad: Tensor

    @property
    def out_dim(self) -> int:
        return self.W3.shape[1]

    def network(self) -> list[Tensor]:
        return [self.W1, self.b1, self.W2, self.b2, self.W3, self.b3]

    def parameters(self) -> list[Tensor]:
        return self.network() + [self.e_self, self.e_pad]

    def network_size(self) -> int:
        """Scalars in the MLP alone; this is the size a weight-generation run touches."""
        return sum(t.data.size for t in self.network())

    def size(self) -> int:
        return sum(t.data.size for t in self.parameters())

    def snapshot(self) -> list[np.ndarray]:
        return [t.data.copy() for t in self.parameters()]

    def layer_sizes(self) -> list[int]:
        return [self.W1.shape[0], self.W1.shape[1], self.W2.shape[1], self.W3.shape[1]]

    def arrays(self) -> dict:
        names = ["W1", "b1", "W2", "b2", "W3", "b3", "e_self", "e_pad"]
        return {n: t.data for n, t in zip(names, self.parameters())}


def hyper_size(N: int, k_max: int) -> int:
    """64(N K_max + 1) + 32*65 + 33 D_out + 2N with D_out = param_count(N, K_max)."""
    h1, h2 = HYPER_HIDDEN
    return h1 * (N * k_max + 1) + h2 * (h1 + 1) + (h2 + 1) * param_count(N, k_max) + 2 * N


def init_hypernet(N: int, k_max: int, rng: np.random.Generator, out_scale: float = 1e-2) -> HypernetParams:
    """Fan-in uniform hidden layers; a small output layer whose bias is a standard module init.

    With the bias set to a freshly initialised module, generated receivers start
    as ordinary random DeepSIC modules and the weight layer learns corrections.
    """
    d_in = N * k_max
    d_out = param_count(N, k_max)
    h1, h2 = HYPER_HIDDEN

    def fan_in(m, n):
        bound = 1.0 / np.sqrt(m)
        return parameter(rng.uniform(-bound, bound, size=(m, n)))

    bias = init_module(N, k_max, rng).flat()
    return HypernetParams(
        N,
        k_max,
        fan_in(d_in, h1),
        parameter(np.zeros(h1)),
        fan_in(h1, h2),
        parameter(np.zeros(h2)),
        parameter(rng.uniform(-out_scale, out_scale, size=(h2, d_out))),
        parameter(bias),
        parameter(rng.standard_normal(N) / np.sqrt(N)),
        parameter(rng.standard_normal(N) / np.sqrt(N)),
    )


def hypernet_mlp(phi: HypernetParams, u: Tensor) -> Tensor:
    h = relu(affine(phi.W1, phi.b1, u))
    h = relu(affine(phi.W2, phi.b2, h))
    return affine(phi.W3, phi.b3, h)


def hypernet_forward(phi: HypernetParams, u: Tensor, N: int, K: int) -> ModuleParams:
    """Module weights for one context vector, read from the leading outputs."""
    if K > phi.k_max:
        raise ValueError(f"K={K} exceeds K_max={phi.k_max}")
    return ModuleParams.from_flat(hypernet_mlp(phi, u), N, K)


def generate_receiver(phi: HypernetParams, H_hat: np.ndarray, K: int) -> ReceiverParams:
    """All K modules from one batched hypernetwork pass (graph kept when enabled)."""
    N = phi.N
    U = stack([build_user_embedding(H_hat, k, K, phi.k_max, phi.e_self, phi.e_pad) for k in range(1, K + 1)])
    out = hypernet_mlp(phi, U)
    return ReceiverParams(N, K, [ModuleParams.from_flat(out[k], N, K) for k in range(K)])


def hypernet_adapt(phi: HypernetParams, block: TransmissionBlock, ledger: ComplexityLedger | None = None) -> ReceiverParams:
    """Weights for this block from its pilots only; no parameter is updated."""
    with no_grad():
        H_hat = ls_estimate(block.pilots_s, block.pilots_y)
        Theta = generate_receiver(phi, H_hat, block.K)
    if ledger is not None:
        ledger.record_ls(phi.N, block.n_pilot, block.K)
        ledger.record_hyper(phi.network_size(), block.K)
    return Theta


# -- datasets -------------------------------------------------------------


@dataclass
class Dataset:
    """Offline training blocks for one user count; each block has its own channel."""

    N: int
    K: int
    blocks: list
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.blocks:
            raise ValueError(f"dataset for K={self.K} is empty")
        for b in self.blocks:
            if b.K != self.K or b.pilots_y.shape[1] != self.N:
                raise ValueError("block does not match dataset (N, K)")

    @property
    def y(self) -> np.ndarray:
        return np.vstack([b.y for b in self.blocks])

    @property
    def s(self) -> np.ndarray:
        return np.vstack([b.s for b in self.blocks])

    @property
    def n_symbols(self) -> int:
        return sum(b.n_pilot + b.n_info for b in self.blocks)


def make_datasets(
    link: LinkConfig,
    user_counts: Sequence[int],
    symbols_per_k: int,
    block_len: int,
    seed: int,
    t_offset: int = 1000,
) -> dict[int, Dataset]:
    """Offline data drawn from the same channel family as deployment, at unseen block indices.

    Each dataset block keeps ``link.n_pilot`` pilots (for the LS features) and
    fills the rest of ``block_len`` with information symbols.
    """
    if block_len <= link.n_pilot:
        raise ValueError("training block must be longer than its pilot prefix")
    n_blocks = max(1, int(np.ceil(symbols_per_k / block_len)))
    out = {}
    for K in user_counts:
        # separate SNR trajectories per user count (matters for random-walk profiles)
        snr = replace(link.snr, seed=link.snr.seed * 1009 + K)
        blk_cfg = replace(link, n_info=block_len - link.n_pilot, snr=snr)
        blocks = []
        for j in range(n_blocks):
            t = t_offset + j
            rng = block_rng(seed, t, stream=100 + K)
            blocks.append(make_block(t, K, blk_cfg, rng))
        out[K] = Dataset(link.N, K, blocks, {"seed": seed, "channel": link.channel, "t_offset": t_offset})
    return out


def save_datasets(path, datasets: Mapping[int, Dataset]) -> None:
    arrays = {}
    header = {"format_version": FORMAT_VERSION, "kind": "datasets", "user_counts": sorted(datasets)}
    for K, ds in datasets.items():
        header["N"] = ds.N
        header[f"meta_{K}"] = ds.meta
        for j, b in enumerate(ds.blocks):
            for name in ("pilots_s", "pilots_y", "info_s", "info_y"):
                arrays[f"K{K}_b{j}_{name}"] = getattr(b, name)
            arrays[f"K{K}_b{j}_t"] = np.array(b.t)
    np.savez_compressed(path, header=json.dumps(header), **arrays)


def load_datasets(path) -> dict[int, Dataset]:
    with np.load(path) as z:
        header = json.loads(str(z["header"]))
        _check_header(header, "datasets", path)
        out = {}
        for K in header["user_counts"]:
            blocks, j = [], 0
            while f"K{K}_b{j}_t" in z:
                p = f"K{K}_b{j}_"
                blocks.append(
                    TransmissionBlock(
                        int(z[p + "t"]), K, z[p + "pilots_s"], z[p + "pilots_y"], z[p + "info_s"], z[p + "info_y"]
                    )
                )
                j += 1
            out[K] = Dataset(header["N"], K, blocks, header.get(f"meta_{K}", {}))
    return out


# -- training -------------------------------------------------------------


@dataclass
class TrainConfig:
    lr: float = 1e-3
    iterations: int = 100
    batch_size: int = 512
    Q: int = 3
    regime: str = "sequential"
    seed: int = 0

    def __post_init__(self):
        if self.regime not in ("sequential", "end-to-end"):
            raise ValueError(f"unknown training regime {self.regime!r}")
        if self.iterations < 0 or self.Q < 1 or self.batch_size < 1:
            raise ValueError("bad training configuration")


def receiver_loss(Theta: ReceiverParams, y: np.ndarray, s: np.ndarray, Q: int = 3) -> float:
    """Cross-entropy of the factorised output distribution (sum of per-user terms)."""
    with no_grad():
        final = sic_forward(Theta, y, Q)[-1]
        labels = labels_of(s)
        return float(sum(cross_entropy(p, labels[:, k]).data for k, p in enumerate(final)))


def _sequential_loss(Theta: ReceiverParams, y, priors, labels) -> Tensor:
    loss = None
    for k, theta in enumerate(Theta.modules):
        others = [l for l in range(Theta.K) if l != k]
        probs = module_forward(theta, y, priors[:, others] if others else None)
        term = cross_entropy(probs, labels[:, k])
        loss = term if loss is None else loss + term
    return loss


def train_receiver(Theta: ReceiverParams, y: np.ndarray, s: np.ndarray, cfg: TrainConfig, rng: np.random.Generator) -> ReceiverParams:
    """Adam on the cross-entropy of (y, s); updates ``Theta`` in place and returns it.

    Sequential regime: for q = 1..Q the modules are fitted against the true
    symbols given the soft estimates of round q-1 (held fixed), then the
    estimates are rolled forward. End-to-end regime differentiates through all
    Q rounds at once. ``cfg.iterations`` Adam steps are taken per round (sequential)
    or in total (end-to-end).
    """
    if cfg.iterations == 0:
        return Theta
    y = np.asarray(y, dtype=np.float64)
    labels = labels_of(s)
    n = len(y)
    opt = Adam(Theta.parameters(), lr=cfg.lr)

    def batch():
        if n <= cfg.batch_size:
            return slice(None)
        return rng.choice(n, size=cfg.batch_size, replace=False)

    if cfg.regime == "end-to-end":
        for _ in range(cfg.iterations):
            idx = batch()
            final = sic_forward(Theta, y[idx], cfg.Q)[-1]
            loss = sum((cross_entropy(p, labels[idx, k]) for k, p in enumerate(final)), start=Tensor(0.0))
            opt.zero_grad()
            loss.backward()
            opt.step()
        return Theta

    priors = np.full((n, Theta.K), 0.5)
    for q in range(cfg.Q):
        for _ in range(cfg.iterations):
            idx = batch()
            loss = _sequential_loss(Theta, Tensor(y[idx]), Tensor(priors[idx]), labels[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
        if q < cfg.Q - 1:
            with no_grad():
                probs = sic_forward(Theta, y, 1, priors=priors)[-1]
            priors = np.stack([p.data[:, 0] for p in probs], axis=1)
    return Theta


def joint_train(datasets: Mapping[int, Dataset], cfg: TrainConfig | None = None) -> dict[int, ReceiverParams]:
    """One static receiver per user count, each fitted on its pooled offline data."""
    cfg = cfg or TrainConfig()
    out = {}
    for K in sorted(datasets):
        ds = datasets[K]
        if ds.n_symbols == 0:
            raise ValueError(f"dataset for K={K} is empty")
        rng = np.random.default_rng([cfg.seed, K])
        Theta = init_params(ds.N, K, rng)
        out[K] = train_receiver(Theta, ds.y, ds.s, cfg, rng)
        log.info("joint K=%d loss %.4f", K, receiver_loss(out[K], ds.y[:2000], ds.s[:2000], cfg.Q))
    return out


def online_adapt(
    prev: ReceiverParams | None,
    block: TransmissionBlock,
    cfg: TrainConfig | None = None,
    rng: np.random.Generator | None = None,
    ledger: ComplexityLedger | None = None,
) -> ReceiverParams:
    """Fit on this block's pilots, warm-starting from ``prev`` when K is unchanged."""
    cfg = cfg or TrainConfig()
    if block.n_pilot == 0:
        raise ValueError("online adaptation needs pilots")
    rng = rng if rng is not None else np.random.default_rng([cfg.seed, block.t])
    N = block.pilots_y.shape[1]
    if prev is not None and prev.K == block.K and prev.N == N:
        Theta = prev if cfg.iterations == 0 else prev.copy()
    else:
        Theta = init_params(N, block.K, rng)
    train_receiver(Theta, block.pilots_y, block.pilots_s, cfg, rng)
    if ledger is not None:
        ledger.record_training(param_count(N, block.K), block.n_pilot, block.K)
    return Theta


@dataclass
class HyperTrainConfig:
    lr: float = 5e-4
    iterations: int = 25
    n_blocks: int = 200
    batch_size: int = 512
    Q: int = 3
    deep_supervision: bool = True
    seed: int = 0


def hypernet_loss(phi: HypernetParams, block: TransmissionBlock, idx, Q: int, deep_supervision: bool = True) -> Tensor:
    """Cross-entropy of the receiver generated from ``block``'s pilots on rows ``idx``."""
    H_hat = ls_estimate(block.pilots_s, block.pilots_y)
    Theta = generate_receiver(phi, H_hat, block.K)
    y, s = block.y, block.s
    labels = labels_of(s[idx])
    rounds = sic_forward(Theta, y[idx], Q)
    if not deep_supervision:
        rounds = rounds[-1:]
    loss = Tensor(0.0)
    for probs in rounds:
        for k, p in enumerate(probs):
            loss = loss + cross_entropy(p, labels[:, k])
    return loss * (1.0 / len(rounds))


def hypernet_train(
    datasets: Mapping[int, Dataset],
    k_max: int,
    cfg: HyperTrainConfig | None = None,
    phi: HypernetParams | None = None,
) -> tuple[HypernetParams, list[float]]:
    """Fit the hypernetwork and embeddings by backpropagating through generated receivers.

    Each round samples a user count uniformly from the datasets, then a block,
    and takes ``cfg.iterations`` Adam steps on mini-batches of that block.
    """
    cfg = cfg or HyperTrainConfig()
    missing = [K for K in range(2, k_max + 1) if K not in datasets]
    if missing:
        raise ValueError(f"hypernetwork training needs datasets for K={missing}")
    N = next(iter(datasets.values())).N
    rng = np.random.default_rng([cfg.seed, 7])
    if phi is None:
        phi = init_hypernet(N, k_max, rng)
    opt = Adam(phi.parameters(), lr=cfg.lr)
    Ks = sorted(datasets)
    history = []
    for _ in range(cfg.n_blocks):
        K = Ks[rng.integers(len(Ks))]
        block = datasets[K].blocks[rng.integers(len(datasets[K].blocks))]
        n = block.n_pilot + block.n_info
        for _ in range(cfg.iterations):
            idx = rng.choice(n, size=min(cfg.batch_size, n), replace=False)
            loss = hypernet_loss(phi, block, idx, cfg.Q, cfg.deep_supervision)
            opt.zero_grad()
            loss.backward()
            opt.step()
            history.append(float(loss.data) / K)
    return phi, history


# -- checkpoints --------------------------------------------------------


def _check_header(header: dict, kind: str, path) -> None:
    if header.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {header.get('format_version')}")
    if header.get("kind") != kind:
        raise ValueError(f"{path}: expected a {kind} file, found {header.get('kind')}")


def save_joint(path, receivers: Mapping[int, ReceiverParams], k_max: int) -> None:
    N = next(iter(receivers.values())).N
    header = {
        "format_version": FORMAT_VERSION,
        "kind": "joint",
        "N": N,
        "k_max": k_max,
        "user_counts": sorted(receivers),
        "layout": "per module: W1 (N+K-1)x16 row-major, b1 16, W2 16x2 row-major, b2 2",
    }
    arrays = {f"K{K}": Theta.flat() for K, Theta in receivers.items()}
    np.savez(path, header=json.dumps(header), **arrays)


def load_joint(path) -> dict[int, ReceiverParams]:
    with np.load(path) as z:
        header = json.loads(str(z["header"]))
        _check_header(header, "joint", path)
        return {K: ReceiverParams.from_flat(z[f"K{K}"], header["N"]) for K in header["user_counts"]}


def save_hypernet(path, phi: HypernetParams) -> None:
    header = {
        "format_version": FORMAT_VERSION,
        "kind": "hypernet",
        "N": phi.N,
        "k_max": phi.k_max,
        "layer_sizes": phi.layer_sizes(),
    }
    np.savez(path, header=json.dumps(header), **phi.arrays())


def load_hypernet(path) -> HypernetParams:
    with np.load(path) as z:
        header = json.loads(str(z["header"]))
        _check_header(header, "hypernet", path)
        names = ["W1", "b1", "W2", "b2", "W3", "b3", "e_self", "e_pad"]
        return HypernetParams(header["N"], header["k_max"], *[parameter(z[n]) for n in names])
