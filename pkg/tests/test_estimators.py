import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from hypermimo.adaptation import init_hypernet, make_datasets
from hypermimo.channel import LinkConfig, make_block
from hypermimo.estimators import HypernetReceiver, JointReceiver, OnlineReceiver, check_block


def _block(K=2, t=1):
    return make_block(t, K, LinkConfig(N=4, k_max=3, n_pilot=30, n_info=50), np.random.default_rng(t))


@pytest.mark.parametrize("cls", [JointReceiver, OnlineReceiver, HypernetReceiver])
def test_get_params_and_clone(cls):
    est = cls(lr=0.01, random_state=3)
    params = est.get_params()
    assert params["lr"] == 0.01 and params["random_state"] == 3
    copy = clone(est)
    assert copy.get_params() == params and copy is not est


def test_unfitted_raise():
    with pytest.raises(NotFittedError):
        JointReceiver().predict(_block())
    with pytest.raises(NotFittedError):
        HypernetReceiver(k_max=3).predict(_block())


def test_check_block_rejects_bad_input():
    blk = _block()
    with pytest.raises(ValueError):
        check_block(blk, N=5)
    with pytest.raises(ValueError):
        check_block(blk, k_max=1)
    blk.info_y[0, 0] = np.nan
    with pytest.raises(ValueError):
        check_block(blk)
    blk = _block()
    blk.pilots_s[0, 0] = 0.5
    with pytest.raises(ValueError):
        check_block(blk)
    with pytest.raises(TypeError):
        check_block("block")


def test_hypernet_receiver_predict_and_score():
    est = HypernetReceiver(k_max=3).set_hypernet(init_hypernet(4, 3, np.random.default_rng(0)))
    blk = _block(K=3)
    out = est.predict(blk)
    assert out.shape == blk.info_s.shape and set(np.unique(out)) <= {1.0, -1.0}
    assert 0.0 <= est.score(blk) <= 1.0
    with pytest.raises(ValueError):
        HypernetReceiver(k_max=2).set_hypernet(init_hypernet(4, 3, np.random.default_rng(0)))


def test_online_receiver_warm_start_by_k():
    est = OnlineReceiver(iterations=2, batch_size=16).fit()
    est.predict(_block(K=2, t=1))
    first = est.previous_
    est.predict(_block(K=3, t=2))
    assert est.previous_.K == 3 and first.K == 2


def test_fit_paths():
    link = LinkConfig(N=4, k_max=3, n_pilot=20)
    data = make_datasets(link, [2, 3], symbols_per_k=400, block_len=100, seed=0)
    joint = JointReceiver(iterations=2, batch_size=64).fit(data)
    assert joint.n_checkpoints == 2
    hyp = HypernetReceiver(k_max=3, iterations=1, n_blocks=3, batch_size=32).fit(data)
    assert len(hyp.loss_curve_) == 3
