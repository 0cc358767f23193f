"""DeepSIC: iterative soft interference cancellation with one small MLP per user.

Module ``k`` sees the received vector together with the current P(s = +1)
estimates of the other users and outputs a distribution over the BPSK
constellation. The same module weights are reused in every iteration.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, affine, as_tensor, concat, no_grad, parameter, relu, softmax

HIDDEN = 16
N_CLASSES = 2


def param_count(N: int, K: int) -> int:
    """Scalars in one user module: 16(N + K + 1) + 18."""
    if N < 1 or K < 1:
        raise ValueError("N and K must be positive")
    d_in = N + K - 1
    return d_in * HIDDEN + HIDDEN + HIDDEN * N_CLASSES + N_CLASSES


def module_shapes(N: int, K: int) -> list[tuple[int, ...]]:
    d_in = N + K - 1
    return [(d_in, HIDDEN), (HIDDEN,), (HIDDEN, N_CLASSES), (N_CLASSES,)]


@dataclass
class ModuleParams:
    W1: Tensor
    b1: Tensor
    W2: Tensor
    b2: Tensor

    @property
    def tensors(self) -> list[Tensor]:
        return [self.W1, self.b1, self.W2, self.b2]

    @property
    def input_dim(self) -> int:
        return self.W1.shape[0]

    def size(self) -> int:
        return sum(t.data.size for t in self.tensors)

    def flat(self) -> np.ndarray:
        """W1 row-major, b1, W2 row-major, b2."""
        return np.concatenate([t.data.ravel() for t in self.tensors])

    @classmethod
    def from_flat(cls, vec, N: int, K: int) -> "ModuleParams":
        """Unflatten the first ``param_count(N, K)`` entries of ``vec``.

        ``vec`` may be a Tensor (e.g. a hypernetwork output); the pieces stay
        connected to it in the graph.
        """
        vec = as_tensor(vec)
        need = param_count(N, K)
        if vec.shape[-1] < need:
            raise ValueError(f"need {need} values, got {vec.shape[-1]}")
        parts, start = [], 0
        for shape in module_shapes(N, K):
            n = int(np.prod(shape))
            parts.append(vec[start : start + n].reshape(shape))
            start += n
        return cls(*parts)

    @classmethod
    def leaf_from_flat(cls, vec: np.ndarray, N: int, K: int) -> "ModuleParams":
        vec = np.asarray(vec, dtype=np.float64)
        return cls(*[parameter(t.data) for t in cls.from_flat(vec, N, K).tensors])


@dataclass
class ReceiverParams:
    N: int
    K: int
    modules: list

    def __post_init__(self):
        if len(self.modules) != self.K or self.K < 1:
            raise ValueError(f"expected {self.K} modules, got {len(self.modules)}")
        for m in self.modules:
            if m.W1.shape != (self.N + self.K - 1, HIDDEN):
                raise ValueError(f"module input width {m.W1.shape[0]} != N + K - 1")

    def parameters(self) -> list[Tensor]:
        return [t for m in self.modules for t in m.tensors]

    def flat(self) -> np.ndarray:
        return np.stack([m.flat() for m in self.modules])

    @classmethod
    def from_flat(cls, flat: np.ndarray, N: int) -> "ReceiverParams":
        flat = np.atleast_2d(flat)
        K = flat.shape[0]
        return cls(N, K, [ModuleParams.leaf_from_flat(row, N, K) for row in flat])

    def copy(self) -> "ReceiverParams":
        return ReceiverParams.from_flat(self.flat(), self.N)


def init_module(N: int, K: int, rng: np.random.Generator) -> ModuleParams:
    """Uniform(+-1/sqrt(fan_in)) weights, zero biases."""
    tensors = []
    for shape in module_shapes(N, K):
        if len(shape) == 2:
            bound = 1.0 / np.sqrt(shape[0])
            tensors.append(parameter(rng.uniform(-bound, bound, size=shape)))
        else:
            tensors.append(parameter(np.zeros(shape)))
    return ModuleParams(*tensors)


def init_params(N: int, K: int, rng: np.random.Generator) -> ReceiverParams:
    if not 1 <= K <= N:
        raise ValueError(f"need N >= K >= 1, got N={N}, K={K}")
    return ReceiverParams(N, K, [init_module(N, K, rng) for _ in range(K)])


def module_forward(theta: ModuleParams, y, interferer_probs=None) -> Tensor:
    """Distribution over (+1, -1) for one user; works on one vector or a batch."""
    y = as_tensor(y)
    if interferer_probs is not None and as_tensor(interferer_probs).shape[-1] > 0:
        x = concat([y, as_tensor(interferer_probs)], axis=y.ndim - 1)
    else:
        x = y
    if x.shape[-1] != theta.input_dim:
        raise ValueError(f"module expects {theta.input_dim} inputs, got {x.shape[-1]}")
    h = relu(affine(theta.W1, theta.b1, x))
    return softmax(affine(theta.W2, theta.b2, h))


def _others(K: int, k: int) -> np.ndarray:
    return np.array([l for l in range(K) if l != k], dtype=np.intp)


def sic_iteration(Theta: ReceiverParams, y: Tensor, priors: Tensor) -> list[Tensor]:
    """One soft-interference-cancellation round; ``priors`` is (B, K) of P(s=+1)."""
    out = []
    for k, theta in enumerate(Theta.modules):
        others = _others(Theta.K, k)
        feats = priors[:, others] if len(others) else None
        out.append(module_forward(theta, y, feats))
    return out


def sic_forward(Theta: ReceiverParams, y, Q: int = 3, priors=None) -> list[list[Tensor]]:
    """Run Q rounds; returns per-iteration lists of per-user (B, 2) distributions.

    Iteration 0 starts from uniform priors unless ``priors`` is given. The last
    entry of the result holds the receiver's output distributions.
    """
    if Q < 1:
        raise ValueError("Q must be >= 1")
    y = as_tensor(y)
    single = y.ndim == 1
    if single:
        y = y.reshape(1, -1)
    B = y.shape[0]
    if priors is None:
        p = Tensor(np.full((B, Theta.K), 0.5))
    else:
        p = as_tensor(priors)
    history = []
    for _ in range(Q):
        probs = sic_iteration(Theta, y, p)
        history.append(probs)
        p = concat([pk[:, 0:1] for pk in probs], axis=1)
    if single:
        history = [[pk[0] for pk in probs] for probs in history]
    return history


def soft_output(Theta: ReceiverParams, y: np.ndarray, Q: int = 3) -> np.ndarray:
    """Final per-user distributions as an array of shape (B, K, 2)."""
    with no_grad():
        final = sic_forward(Theta, np.atleast_2d(y), Q)[-1]
    return np.stack([p.data for p in final], axis=1)


def detect(final_probs: np.ndarray, points=(1.0, -1.0)) -> np.ndarray:
    """Per-user argmax; exact ties resolve to constellation index 0."""
    idx = np.argmax(np.asarray(final_probs), axis=-1)
    return np.asarray(points)[idx]


def predict(Theta: ReceiverParams, y: np.ndarray, Q: int = 3) -> np.ndarray:
    return detect(soft_output(Theta, y, Q))
