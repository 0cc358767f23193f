"""Block-fading MIMO link: channels, SNR profiles, BPSK symbols and AWGN."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np


class ConfigError(ValueError):
    pass


class TraceFormatError(ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class Constellation:
    points: tuple = (1.0, -1.0)

    def __post_init__(self):
        if len(set(self.points)) != len(self.points):
            raise ConfigError("constellation points must be distinct")

    @property
    def size(self) -> int:
        return len(self.points)

    @property
    def bits_per_symbol(self) -> int:
        return int(math.log2(self.size))

    def index_of(self, symbols: np.ndarray) -> np.ndarray:
        """Map symbol values back to constellation indices."""
        pts = np.asarray(self.points)
        idx = np.argmin(np.abs(np.asarray(symbols)[..., None] - pts), axis=-1)
        return idx

    def symbols(self, indices: np.ndarray) -> np.ndarray:
        return np.asarray(self.points)[indices]


BPSK = Constellation((1.0, -1.0))


def db_to_linear(db):
    return 10.0 ** (np.asarray(db, dtype=np.float64) / 10.0)


# -- SNR profiles -------------------------------------------------------


@dataclass(frozen=True)
class SnrProfileConfig:
    """Per-user SNR trajectory over blocks.

    ``sinusoid``: base + amplitude * sin(2*pi*(t + k*phase_offset) / period), in dB.
    ``random-walk``: seeded Gaussian walk in dB, reflected into [base - amp, base + amp].
    """

    kind: str = "sinusoid"
    base_snr_db: float = 10.0
    amplitude_db: float = 0.0
    period_blocks: int = 20
    seed: int = 0
    phase_offset: float = 3.0

    def __post_init__(self):
        if self.kind not in ("constant", "sinusoid", "random-walk"):
            raise ConfigError(f"unknown SNR profile kind {self.kind!r}")
        if self.period_blocks < 1:
            raise ConfigError("period_blocks must be >= 1")
        if self.amplitude_db < 0:
            raise ConfigError("amplitude_db must be >= 0")


@lru_cache(maxsize=256)
def _walk(seed: int, k: int, length: int, base: float, amp: float, period: int) -> np.ndarray:
    rng = np.random.default_rng([seed, k])
    step = amp / math.sqrt(period) if amp > 0 else 0.0
    x = np.empty(length)
    cur = base + amp * (2 * rng.random() - 1)
    for i in range(length):
        cur += step * rng.standard_normal()
        lo, hi = base - amp, base + amp
        while cur < lo or cur > hi:
            cur = 2 * lo - cur if cur < lo else 2 * hi - cur
        x[i] = cur
    return x


def snr_profile_db(cfg: SnrProfileConfig, t: int, k: int) -> float:
    if cfg.kind == "constant" or cfg.amplitude_db == 0:
        return float(cfg.base_snr_db)
    if cfg.kind == "sinusoid":
        angle = 2 * math.pi * (t + k * cfg.phase_offset) / cfg.period_blocks
        return cfg.base_snr_db + cfg.amplitude_db * math.sin(angle)
    # random walk: whole path regenerated deterministically up to block t
    length = max(64, 1 << int(t).bit_length())
    path = _walk(cfg.seed, k, length, cfg.base_snr_db, cfg.amplitude_db, cfg.period_blocks)
    return float(path[t - 1])


def snr_profile(cfg: SnrProfileConfig, t: int, k: int) -> float:
    """Linear SNR of user ``k`` (1-indexed) in block ``t`` (1-indexed)."""
    if t < 1:
        raise ConfigError("block index starts at 1")
    return float(db_to_linear(snr_profile_db(cfg, t, k)))


# -- channel and transmission ---------------------------------------------


def synthetic_channel(N: int, K: int, snr: Sequence[float]) -> np.ndarray:
    """Exponential spatial decay: H[n, k] = sqrt(snr_k) * exp(-|n - k|)."""
    if not 1 <= K <= N:
        raise ConfigError(f"need N >= K >= 1, got N={N}, K={K}")
    snr = np.asarray(snr, dtype=np.float64)
    if snr.shape != (K,) or np.any(snr <= 0):
        raise ConfigError("snr must hold K positive values")
    n = np.arange(1, N + 1)[:, None]
    k = np.arange(1, K + 1)[None, :]
    return np.sqrt(snr)[None, :] * np.exp(-np.abs(n - k))


def generate_symbols(rng: np.random.Generator, B: int, K: int, c: Constellation = BPSK) -> np.ndarray:
    if B < 1:
        raise ConfigError("block length must be >= 1")
    idx = rng.integers(0, c.size, size=(B, K))
    return c.symbols(idx)


def transmit(H: np.ndarray, s: np.ndarray, noise_variance: float, rng: np.random.Generator) -> np.ndarray:
    """Rows y_i = H s_i + w_i with i.i.d. N(0, noise_variance) entries in w_i."""
    H = np.asarray(H, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 2 or H.ndim != 2 or s.shape[1] != H.shape[1]:
        raise ValueError(f"symbols {s.shape} do not match channel {H.shape}")
    if noise_variance < 0:
        raise ValueError("noise variance must be >= 0")
    y = s @ H.T
    if noise_variance > 0:
        y = y + math.sqrt(noise_variance) * rng.standard_normal(y.shape)
    return y


@dataclass(frozen=True)
class ChannelRealization:
    t: int
    H: np.ndarray
    snr: np.ndarray
    noise_variance: float

    @property
    def K(self) -> int:
        return self.H.shape[1]


@dataclass
class TransmissionBlock:
    t: int
    K: int
    pilots_s: np.ndarray
    pilots_y: np.ndarray
    info_s: np.ndarray
    info_y: np.ndarray
    channel: ChannelRealization | None = None

    @property
    def n_pilot(self) -> int:
        return len(self.pilots_s)

    @property
    def n_info(self) -> int:
        return len(self.info_s)

    @property
    def y(self) -> np.ndarray:
        return np.vstack([self.pilots_y, self.info_y])

    @property
    def s(self) -> np.ndarray:
        return np.vstack([self.pilots_s, self.info_s])


# -- traces ---------------------------------------------------------------


@dataclass(frozen=True)
class TraceRecord:
    t: int
    K: int
    H: np.ndarray


def load_trace(path, k_max: int | None = None, N: int | None = None) -> list[TraceRecord]:
    """Parse a channel trace: a ``t K`` header line then N rows of K reals, per block.

    When ``N`` is not given it is inferred from the first block, which then ends
    at the next all-integer two-token line or a blank line.
    """
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    records: list[TraceRecord] = []
    i = 0
    while i < len(lines):
        if not lines[i].strip():
            i += 1
            continue
        head = lines[i].split()
        if len(head) != 2:
            raise TraceFormatError(i + 1, "expected header 't K'")
        try:
            t, K = int(head[0]), int(head[1])
        except ValueError:
            raise TraceFormatError(i + 1, "header values must be integers") from None
        if K < 1:
            raise TraceFormatError(i + 1, "K must be >= 1")
        if k_max is not None and K > k_max:
            raise TraceFormatError(i + 1, f"K={K} exceeds K_max={k_max}")
        rows = []
        j = i + 1
        while j < len(lines) and (N is None or len(rows) < N):
            parts = lines[j].split()
            if not parts:
                if N is None:
                    break
                raise TraceFormatError(j + 1, "blank line inside a matrix")
            if len(parts) == 2 and N is None and rows and _is_header(parts):
                break
            if len(parts) != K:
                raise TraceFormatError(j + 1, f"expected {K} values, got {len(parts)}")
            try:
                rows.append([float(v) for v in parts])
            except ValueError:
                raise TraceFormatError(j + 1, "non-numeric entry") from None
            j += 1
        if N is None:
            N = len(rows)
        if len(rows) != N:
            raise TraceFormatError(j, f"block t={t} has {len(rows)} rows, expected N={N}")
        if K > N:
            raise TraceFormatError(i + 1, f"K={K} exceeds N={N}")
        records.append(TraceRecord(t, K, np.array(rows)))
        i = j
    return records


def _is_header(parts) -> bool:
    return all(p.lstrip("-").isdigit() for p in parts)


def write_trace(path, records: Sequence[TraceRecord]) -> None:
    out = []
    for rec in records:
        out.append(f"{rec.t} {rec.K}")
        for row in np.atleast_2d(rec.H):
            out.append(" ".join(repr(float(v)) for v in row))
    Path(path).write_text("\n".join(out) + ("\n" if out else ""), encoding="utf-8")


# -- block generation -------------------------------------------------------


@dataclass
class LinkConfig:
    """What one block of the link looks like."""

    N: int = 8
    k_max: int = 6
    n_pilot: int = 800
    n_info: int = 15200
    channel: str = "synthetic"
    snr: SnrProfileConfig = field(default_factory=SnrProfileConfig)
    trace_snr_db: float = 12.0
    constellation: Constellation = BPSK

    def __post_init__(self):
        if not 1 <= self.k_max <= self.N:
            raise ConfigError(f"need N >= K_max >= 1, got N={self.N}, K_max={self.k_max}")
        if self.n_pilot < 1 or self.n_info < 0:
            raise ConfigError("block needs at least one pilot")
        if self.channel not in ("synthetic", "trace"):
            raise ConfigError(f"unknown channel kind {self.channel!r}")


def block_rng(seed: int, t: int, stream: int = 0) -> np.random.Generator:
    return np.random.default_rng([seed, stream, t])


def channel_realization(cfg: LinkConfig, t: int, K: int, H: np.ndarray | None = None) -> ChannelRealization:
    if K > cfg.k_max:
        raise ConfigError(f"K={K} exceeds K_max={cfg.k_max}")
    if H is None:
        snr = np.array([snr_profile(cfg.snr, t, k) for k in range(1, K + 1)])
        return ChannelRealization(t, synthetic_channel(cfg.N, K, snr), snr, 1.0)
    # replayed trace: SNR acts through the noise variance
    var = float(db_to_linear(-cfg.trace_snr_db))
    return ChannelRealization(t, np.asarray(H, dtype=np.float64), np.full(K, 1.0 / var), var)


def make_block(t: int, K: int, cfg: LinkConfig, rng: np.random.Generator, H: np.ndarray | None = None) -> TransmissionBlock:
    """Pilots then info symbols, both sent through the same channel."""
    ch = channel_realization(cfg, t, K, H)
    if ch.H.shape != (cfg.N, K):
        raise ConfigError(f"channel shape {ch.H.shape} != ({cfg.N}, {K})")
    c = cfg.constellation
    s_pilot = generate_symbols(rng, cfg.n_pilot, K, c)
    s_info = generate_symbols(rng, cfg.n_info, K, c) if cfg.n_info else np.empty((0, K))
    y_pilot = transmit(ch.H, s_pilot, ch.noise_variance, rng)
    y_info = transmit(ch.H, s_info, ch.noise_variance, rng)
    return TransmissionBlock(t, K, s_pilot, y_pilot, s_info, y_info, ch)


def iter_blocks(cfg: LinkConfig, schedule: Sequence[int], seed: int, trace=None) -> Iterator[TransmissionBlock]:
    """Blocks t = 1..len(schedule); each block draws from its own seeded stream."""
    for t, K in enumerate(schedule, start=1):
        H = None
        if trace is not None:
            rec = trace[(t - 1) % len(trace)]
            H, K = rec.H, rec.K
        yield make_block(t, K, cfg, block_rng(seed, t), H)
