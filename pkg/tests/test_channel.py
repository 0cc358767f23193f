import math

import numpy as np
import pytest

from hypermimo.adaptation import ls_estimate
from hypermimo.channel import (
    BPSK,
    ConfigError,
    LinkConfig,
    SnrProfileConfig,
    TraceFormatError,
    TraceRecord,
    generate_symbols,
    iter_blocks,
    load_trace,
    make_block,
    snr_profile,
    synthetic_channel,
    transmit,
    write_trace,
)


def test_synthetic_channel_two_by_two():
    H = synthetic_channel(2, 2, [1.0, 4.0])
    e = math.exp(-1)
    np.testing.assert_allclose(H, [[1.0, 2 * e], [e, 2.0]])
    np.testing.assert_allclose(H, [[1, 0.7358], [0.3679, 2]], atol=1e-4)


def test_synthetic_channel_diagonal_and_scaling():
    H = synthetic_channel(4, 3, [1.0, 1.0, 0.25])
    np.testing.assert_allclose(np.diag(H)[:2], 1.0)
    ref = synthetic_channel(4, 3, [1.0, 1.0, 1.0])
    np.testing.assert_allclose(H[:, 2], 0.5 * ref[:, 2])


def test_synthetic_channel_rejects_more_users_than_antennas():
    with pytest.raises(ConfigError):
        synthetic_channel(2, 3, [1, 1, 1])


def test_synthetic_column_norm_monotone_in_snr():
    lo = synthetic_channel(6, 3, [1.0, 2.0, 3.0])
    hi = synthetic_channel(6, 3, [1.5, 2.5, 3.5])
    assert np.all(np.linalg.norm(hi, axis=0) > np.linalg.norm(lo, axis=0))
    np.testing.assert_array_equal(lo, synthetic_channel(6, 3, [1.0, 2.0, 3.0]))


def test_snr_profile_constant():
    cfg = SnrProfileConfig(kind="constant", base_snr_db=12)
    for t in (1, 5, 99):
        assert snr_profile(cfg, t, 1) == pytest.approx(15.849, abs=1e-3)


def test_snr_profile_sinusoid_zero_amplitude_is_constant():
    cfg = SnrProfileConfig(kind="sinusoid", base_snr_db=7, amplitude_db=0, period_blocks=5)
    vals = {snr_profile(cfg, t, k) for t in range(1, 20) for k in range(1, 4)}
    assert len(vals) == 1
    assert vals.pop() == pytest.approx(10**0.7)


def test_snr_profile_sinusoid_formula():
    cfg = SnrProfileConfig(kind="sinusoid", base_snr_db=10, amplitude_db=3, period_blocks=8, phase_offset=2)
    want_db = 10 + 3 * math.sin(2 * math.pi * (5 + 3 * 2) / 8)
    assert snr_profile(cfg, 5, 3) == pytest.approx(10 ** (want_db / 10))


@pytest.mark.parametrize("kind", ["sinusoid", "random-walk"])
def test_snr_profile_deterministic(kind):
    a = SnrProfileConfig(kind=kind, amplitude_db=4, seed=3)
    b = SnrProfileConfig(kind=kind, amplitude_db=4, seed=3)
    assert [snr_profile(a, t, 2) for t in range(1, 150)] == [snr_profile(b, t, 2) for t in range(1, 150)]


def test_random_walk_stays_in_band():
    cfg = SnrProfileConfig(kind="random-walk", base_snr_db=10, amplitude_db=3, seed=1)
    db = 10 * np.log10([snr_profile(cfg, t, 1) for t in range(1, 300)])
    assert db.min() >= 7 - 1e-9 and db.max() <= 13 + 1e-9


def test_profile_config_validation():
    with pytest.raises(ConfigError):
        SnrProfileConfig(period_blocks=0)
    with pytest.raises(ConfigError):
        SnrProfileConfig(amplitude_db=-1)
    with pytest.raises(ConfigError):
        SnrProfileConfig(kind="square")


def test_generate_symbols_mean_and_reproducibility():
    B = 40000
    s = generate_symbols(np.random.default_rng(0), B, 1)
    assert s.shape == (B, 1)
    assert abs(s.mean()) < 3 / math.sqrt(B)
    assert set(np.unique(s)) <= {1.0, -1.0}
    np.testing.assert_array_equal(s, generate_symbols(np.random.default_rng(0), B, 1))


def test_transmit_noiseless():
    y = transmit(np.eye(2), np.array([[1.0, -1.0]]), 0.0, np.random.default_rng(0))
    np.testing.assert_array_equal(y, [[1.0, -1.0]])


def test_transmit_noiseless_is_linear(rng):
    H = rng.normal(size=(5, 3))
    s = generate_symbols(rng, 50, 3)
    np.testing.assert_allclose(transmit(H, s, 0.0, rng), s @ H.T)


def test_transmit_noise_variance(rng):
    H = rng.normal(size=(3, 2))
    s = generate_symbols(rng, 10_000, 2)
    w = transmit(H, s, 1.0, rng) - s @ H.T
    np.testing.assert_allclose(w.var(axis=0), 1.0, rtol=0.05)


def test_transmit_shape_mismatch(rng):
    with pytest.raises(ValueError):
        transmit(np.eye(3), np.ones((4, 2)), 0.0, rng)


def test_default_block_lengths():
    cfg = LinkConfig(N=12, k_max=12)
    assert (cfg.n_pilot, cfg.n_info) == (800, 15200)


def test_make_block_single_user_and_determinism():
    cfg = LinkConfig(N=4, k_max=3, n_pilot=20, n_info=30)
    a = make_block(1, 1, cfg, np.random.default_rng(5))
    b = make_block(1, 1, cfg, np.random.default_rng(5))
    assert a.pilots_s.shape == (20, 1) and a.info_s.shape == (30, 1)
    for name in ("pilots_s", "pilots_y", "info_s", "info_y"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))


def test_block_uses_one_channel_for_pilots_and_info():
    cfg = LinkConfig(N=6, k_max=4, n_pilot=40, n_info=40)
    blk = make_block(3, 4, cfg, np.random.default_rng(0))
    clean_p = blk.pilots_s @ blk.channel.H.T
    clean_i = blk.info_s @ blk.channel.H.T
    np.testing.assert_allclose(ls_estimate(blk.pilots_s, clean_p), ls_estimate(blk.info_s, clean_i))


def test_iter_blocks_is_reproducible():
    cfg = LinkConfig(N=4, k_max=3, n_pilot=10, n_info=10, snr=SnrProfileConfig(amplitude_db=3))
    a = list(iter_blocks(cfg, [2, 3, 1], seed=4))
    b = list(iter_blocks(cfg, [2, 3, 1], seed=4))
    assert [x.K for x in a] == [2, 3, 1]
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.info_y, y.info_y)


def test_trace_empty(tmp_path):
    p = tmp_path / "t.txt"
    p.write_text("")
    assert load_trace(p) == []


def test_trace_round_trip(tmp_path, rng):
    recs = [TraceRecord(1, 2, rng.normal(size=(4, 2))), TraceRecord(2, 3, rng.normal(size=(4, 3))),
            TraceRecord(3, 1, rng.normal(size=(4, 1)))]
    p = tmp_path / "t.txt"
    write_trace(p, recs)
    back = load_trace(p, k_max=3)
    assert [(r.t, r.K) for r in back] == [(1, 2), (2, 3), (3, 1)]
    for r, q in zip(recs, back):
        np.testing.assert_array_equal(r.H, q.H)


def test_trace_rejects_more_users_than_antennas(tmp_path):
    p = tmp_path / "t.txt"
    p.write_text("1 1\n0.5\n0.25\n2 3\n1.0 2.0 3.0\n4.0 5.0 6.0\n")
    with pytest.raises(TraceFormatError) as err:
        load_trace(p)
    assert err.value.line == 4


def test_trace_errors_carry_line_numbers(tmp_path):
    p = tmp_path / "t.txt"
    p.write_text("1 2\n1.0 2.0\n3.0 x\n")
    with pytest.raises(TraceFormatError) as err:
        load_trace(p)
    assert err.value.line == 3
    p.write_text("1 2\n1.0 2.0\n3.0 4.0\n2 3\n1.0 2.0 3.0\n")
    with pytest.raises(TraceFormatError):
        load_trace(p)
    p.write_text("1 4\n1.0 2.0 3.0 4.0\n")
    with pytest.raises(TraceFormatError):
        load_trace(p, k_max=3)
