import json
import threading

import numpy as np
import pytest

from hypermimo.adaptation import hyper_size, init_hypernet
from hypermimo.channel import ConfigError, SnrProfileConfig
from hypermimo.complexity import ComplexityLedger, approx_ratio, closed_form_ratio, complexity_ratio
from hypermimo.deepsic import init_params, param_count
from hypermimo.estimators import HypernetReceiver, JointReceiver, MissingCheckpointError
from hypermimo.harness import (
    CSV_HEADER,
    ExperimentConfig,
    emit_results,
    load_config,
    make_estimator,
    ratio_report,
    run_experiment,
    ser,
)


def small_cfg(**kw):
    base = dict(N=4, k_max=3, users=2, T=4, n_pilot=40, n_info=60, online={"iterations": 5, "batch_size": 64})
    base.update(kw)
    return ExperimentConfig(**base)


# -- ser ----------------------------------------------------------------------


def test_ser_cases():
    truth = np.array([[1.0, -1.0], [1.0, 1.0]])
    assert ser(truth, truth) == 0.0
    wrong = truth.copy()
    wrong[0, 0] = -1.0
    assert ser(wrong, truth) == 0.25
    assert ser(-truth, truth) == 1.0
    with pytest.raises(ValueError):
        ser(truth[:1], truth)


def test_ser_order_invariant(rng):
    truth = rng.choice([1.0, -1.0], size=(50, 3))
    est = truth * rng.choice([1.0, -1.0], p=[0.8, 0.2], size=truth.shape)
    perm = rng.permutation(50)
    assert ser(est[perm], truth[perm]) == ser(est, truth)


# -- ledger -------------------------------------------------------------------


def test_ledger_training_units():
    led = ComplexityLedger(alpha_t=1.0)
    assert led.record_training(354, 800, 8) == 2_265_600
    led.record_training(354, 0, 8)
    assert led.training == 2_265_600
    led.record_training(354, 800, 8)
    assert led.training == 2 * 2_265_600


def test_ledger_other_counters():
    led = ComplexityLedger()
    assert led.record_hyper(25154, 8) == 201_232
    assert led.record_hyper(25154, 0) == 0
    led.record_ls(12, 800, 8)
    led.record_inference(354, 100, 2)
    assert led.training == 0
    assert led.ls == 12 * 800 * 8 and led.inference == 354 * 200 and led.hyper == 201_232
    with pytest.raises(ValueError):
        led.record_ls(-1, 1, 1)


def test_ledger_is_thread_safe():
    led = ComplexityLedger(alpha_i=1.0)
    threads = [threading.Thread(target=lambda: [led.record_hyper(1, 1) for _ in range(2000)]) for _ in range(4)]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    assert led.hyper == 8000


def test_hyper_network_size_matches_stated_value():
    assert hyper_size(12, 12) - 2 * 12 == 25154
    assert param_count(12, 8) == 354


def test_simplified_ratio_below_one_fifth():
    r = approx_ratio(100, 1, 354, 25154, 800, 15200)
    assert r == pytest.approx(0.1909, abs=5e-5)
    assert r < 0.2
    assert closed_form_ratio(100, 1, 354, 25154, 800, 15200, 12) < 0.2


def test_ratio_vanishes_as_training_grows():
    vals = [closed_form_ratio(a, 1, 354, 25154, 800, 15200, 12) for a in (1e2, 1e4, 1e6, 1e9)]
    assert all(x > y for x, y in zip(vals, vals[1:]))
    assert vals[-1] < 1e-6


def test_ratio_zero_denominator():
    with pytest.raises(ZeroDivisionError):
        complexity_ratio(ComplexityLedger(), ComplexityLedger())


# -- config ----------------------------------------------------------------------


def test_config_validation():
    with pytest.raises(ConfigError):
        small_cfg(T=0)
    with pytest.raises(ConfigError):
        small_cfg(k_max=5)
    with pytest.raises(ConfigError):
        small_cfg(users=[1, 4, 2, 2])
    with pytest.raises(ConfigError):
        small_cfg(method="magic")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"bogus": 1})
    with pytest.raises(ConfigError):
        small_cfg(users=[1, 2]).schedule()


def test_config_round_trip(tmp_path):
    cfg = small_cfg(users={"choices": [1, 2, 3]}, snr=SnrProfileConfig(kind="sinusoid", amplitude_db=2))
    p = tmp_path / "c.json"
    p.write_text(json.dumps(cfg.to_dict()))
    back = load_config(p)
    assert back == cfg
    assert back.schedule() == cfg.schedule()
    assert set(cfg.schedule()) <= {1, 2, 3}


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
    (tmp_path / "bad.json").write_text("[1, 2]")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.json")


# -- runs ----------------------------------------------------------------------


def test_online_run_is_deterministic_and_trains_every_block():
    cfg = small_cfg(method="online")
    r1, s1, led = run_experiment(cfg)
    r2, _, _ = run_experiment(cfg)
    assert [r.ser for r in r1] == [r.ser for r in r2]
    assert all(r.train_units > 0 for r in r1)
    assert all(0 <= r.ser <= 1 for r in r1)
    assert s1["total_train_units"] == led.training > 0


def test_joint_run_weights_static():
    cfg = small_cfg(method="joint")
    Theta = init_params(4, 2, np.random.default_rng(0))
    est = JointReceiver().set_receivers({2: Theta})
    before = Theta.flat()
    seen = []
    orig = est.adapt

    def spy(block, ledger=None):
        out = orig(block, ledger)
        seen.append(out.flat())
        return out

    est.adapt = spy
    results, summary, led = run_experiment(cfg, est)
    assert led.training == 0 and summary["total_train_units"] == 0
    for f in seen:
        np.testing.assert_array_equal(f, before)


def test_joint_missing_checkpoint_names_k():
    cfg = small_cfg(method="joint", users=3)
    est = JointReceiver().set_receivers({2: init_params(4, 2, np.random.default_rng(0))})
    with pytest.raises(MissingCheckpointError, match="K=3"):
        run_experiment(cfg, est)


def test_untrained_methods_need_estimator():
    with pytest.raises(ConfigError):
        run_experiment(small_cfg(method="hyper"))


def test_hyper_run_tracks_varying_k():
    cfg = small_cfg(method="hyper", users=[1, 3, 2, 3])
    est = HypernetReceiver(k_max=3).set_hypernet(init_hypernet(4, 3, np.random.default_rng(0)))
    results, summary, led = run_experiment(cfg, est)
    assert [r.K for r in results] == [1, 3, 2, 3]
    assert led.training == 0 and led.hyper > 0 and led.ls > 0
    # symbol weighted aggregate
    w = np.array([r.K * r.n_info for r in results])
    assert summary["aggregate_ser"] == pytest.approx(np.sum(w * [r.ser for r in results]) / w.sum())


def test_measured_ratio_matches_closed_form():
    cfg = small_cfg(users=2, T=3, online={"iterations": 1, "batch_size": 16})
    est = HypernetReceiver(k_max=3).set_hypernet(init_hypernet(4, 3, np.random.default_rng(0)))
    _, _, hyp = run_experiment(cfg, est, method="hyper")
    _, _, onl = run_experiment(cfg, method="online")
    rep = ratio_report(cfg, hyp, onl, 2)
    assert rep["measured"] == pytest.approx(rep["closed_form"], rel=1e-12)


def test_emit_results(tmp_path):
    cfg = small_cfg(method="online")
    results, summary, _ = run_experiment(cfg)
    paths = emit_results(results, summary, cfg, tmp_path)
    first = [p.read_bytes() for p in paths]
    lines = (tmp_path / "results.csv").read_text().splitlines()
    assert lines[0] == ",".join(CSV_HEADER)
    assert len(lines) - 1 == cfg.T
    emit_results(results, summary, cfg, tmp_path)
    assert [p.read_bytes() for p in paths] == first
    assert json.loads((tmp_path / "config.resolved.json").read_text())["T"] == cfg.T


def test_emit_results_unwritable(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError, match="file"):
        emit_results([], {}, small_cfg(), blocker / "sub")


def test_make_estimator_passes_settings():
    cfg = small_cfg(hyper={"lr": 1e-2, "iterations": 3, "n_blocks": 7, "batch_size": 8})
    est = make_estimator(cfg, "hyper")
    assert est.get_params()["n_blocks"] == 7 and est.k_max == 3
