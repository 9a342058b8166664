import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from fasthdr import SdrToHdrRegressor
from fasthdr.data import synth_dataset
from fasthdr.errors import DataError

TINY = dict(base_channels=16, cond_channels=8, n_blocks=2, le_width=8, iterations=4, batch_size=2, crop=32)


@pytest.fixture(scope="module")
def pairs():
    samples = synth_dataset(3, 64, seed=9)
    return np.stack([s.sdr for s in samples]), np.stack([s.hdr for s in samples])


@pytest.fixture(scope="module")
def fitted(pairs):
    return SdrToHdrRegressor(**TINY).fit(*pairs)


def test_get_params_and_clone():
    est = SdrToHdrRegressor(le_width=8, iterations=3)
    params = est.get_params()
    assert params["le_width"] == 8 and params["iterations"] == 3
    twin = clone(est)
    assert twin.get_params() == params and twin is not est
    est.set_params(lr=5e-4)
    assert est.lr == 5e-4


def test_fit_sets_attributes(fitted):
    assert fitted.n_iter_ == 4
    assert len(fitted.loss_curve_) == 4 and all(np.isfinite(fitted.loss_curve_))
    assert fitted.n_params_ == fitted.model_.num_parameters()


def test_predict_shapes_and_range(fitted, pairs):
    X, _ = pairs
    out = fitted.predict(X)
    assert out.shape == X.shape and out.dtype == np.float32
    assert out.min() >= 0 and out.max() <= 1
    as_list = fitted.predict(list(X))
    assert isinstance(as_list, list) and np.array_equal(as_list[0], out[0])


def test_score_is_mean_psnr(fitted, pairs):
    from fasthdr import metrics
    X, y = pairs
    preds = fitted.predict(X)
    expected = np.mean([metrics.psnr(p, t) for p, t in zip(preds, y)])
    assert fitted.score(X, y) == pytest.approx(expected)


def test_fit_is_deterministic(pairs):
    a = SdrToHdrRegressor(**TINY).fit(*pairs)
    b = SdrToHdrRegressor(**TINY).fit(*pairs)
    assert a.loss_curve_ == b.loss_curve_


def test_not_fitted():
    with pytest.raises(NotFittedError):
        SdrToHdrRegressor().predict(np.zeros((1, 3, 64, 64), np.float32))


@pytest.mark.parametrize("X,y", [
    (np.zeros((2, 3, 64, 64)), np.zeros((3, 3, 64, 64))),
    (np.zeros((1, 3, 64, 64)), np.zeros((1, 3, 64, 72))),
    (np.full((1, 3, 64, 64), 1.5), np.zeros((1, 3, 64, 64))),
    (np.full((1, 3, 64, 64), np.nan), np.zeros((1, 3, 64, 64))),
    (np.zeros((1, 64, 64, 3)), np.zeros((1, 64, 64, 3))),
    (np.zeros((3, 64, 64)), np.zeros((3, 64, 64))),
    ([], []),
])
def test_fit_validation(X, y):
    with pytest.raises(DataError):
        SdrToHdrRegressor(**TINY).fit(X, y)


def test_save_load_round_trip(fitted, pairs, tmp_path):
    X, _ = pairs
    fitted.save(tmp_path / "m.fhdr")
    back = SdrToHdrRegressor.load(tmp_path / "m.fhdr")
    assert back.le_width == 8 and back.base_channels == 16
    assert np.array_equal(back.predict(X), fitted.predict(X))


def test_tiled_estimator_matches(fitted, pairs):
    X, _ = pairs
    tiled = clone(fitted).set_params(tile=32)
    tiled.model_ = fitted.model_
    np.testing.assert_allclose(tiled.predict(X), fitted.predict(X), atol=1e-6)
