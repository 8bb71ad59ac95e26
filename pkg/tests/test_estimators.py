import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from npiv import ConditionalMeanIVRegressor, IndependenceIVRegressor, QuantileIVRegressor
from npiv.simulation import Scenario, generate_sample, relative_error

RANGES = dict(y_range=(-0.5, 0.5), x_range=(0.0, 1.0), z_range=(0.0, 1.0))
ESTIMATORS = (IndependenceIVRegressor, ConditionalMeanIVRegressor, QuantileIVRegressor)


@pytest.fixture(scope="module")
def data():
    s = generate_sample(Scenario(), 300, 7)
    return s.x, s.y, s.z


@pytest.mark.parametrize("cls", ESTIMATORS)
def test_params_roundtrip(cls):
    est = cls(grid_n=17, max_steps=9)
    params = est.get_params()
    assert params["grid_n"] == 17 and params["max_steps"] == 9
    c = clone(est)
    assert c.get_params() == params
    c.set_params(q_alpha=0.8)
    assert c.q_alpha == 0.8 and est.q_alpha == 0.9


@pytest.mark.parametrize("cls", ESTIMATORS)
def test_fit_predict(cls, data):
    x, y, z = data
    est = cls(grid_n=20, max_steps=25, **RANGES)
    assert est.fit(x, y, z) is est
    pred = est.predict(np.linspace(-0.2, 1.2, 9))
    assert pred.shape == (9,) and np.all(np.isfinite(pred))
    # constant continuation outside the x-range
    assert pred[0] == est.phi_.values[0] and pred[-1] == est.phi_.values[-1]
    assert 0 <= est.n_iter_ <= est.j_max_ <= 25
    assert est.alpha_ == pytest.approx(est.alpha0 * est.q_alpha ** est.n_iter_)
    assert est.n_features_in_ == 1
    assert np.allclose(est.predict(x.reshape(-1, 1)), est.predict(x))


def test_column_inputs_and_determinism(data):
    x, y, z = data
    a = IndependenceIVRegressor(grid_n=16, max_steps=15).fit(x[:, None], y, z[:, None])
    b = IndependenceIVRegressor(grid_n=16, max_steps=15).fit(x, y, z)
    assert np.array_equal(a.phi_.values, b.phi_.values)


def test_fixed_stopping(data):
    x, y, z = data
    est = IndependenceIVRegressor(grid_n=16, max_steps=6, stopping="fixed").fit(x, y, z)
    assert est.n_iter_ == 6 and est.phi_bound_ is None


def test_accuracy():
    scn = Scenario()
    s = generate_sample(scn, 500, 7)
    est = IndependenceIVRegressor(grid_n=40, **RANGES).fit(s.x, s.y, s.z)
    x = est.x_grid_.nodes
    phi0 = np.full(x.size, s.y.mean())
    assert relative_error(est.x_grid_, est.phi_.values, scn.phi_true(x), phi0) <= 0.45


def test_quantile_median_of_shifted_data(data):
    x, y, z = data
    lo = QuantileIVRegressor(quantile=0.5, grid_n=16, max_steps=20, stopping="fixed").fit(x, y, z)
    hi = QuantileIVRegressor(quantile=0.5, grid_n=16, max_steps=20, stopping="fixed").fit(x, y + 1.0, z)
    assert np.allclose(hi.phi_.values - lo.phi_.values, 1.0, atol=0.05)


class TestValidation:
    def test_needs_instrument(self, data):
        x, y, _ = data
        with pytest.raises(ValueError, match="instrument"):
            IndependenceIVRegressor().fit(x, y)

    def test_shapes(self, data):
        x, y, z = data
        with pytest.raises(ValueError):
            IndependenceIVRegressor().fit(x, y[:-1], z)
        with pytest.raises(ValueError):
            IndependenceIVRegressor().fit(x, y, z[:-1])
        with pytest.raises(ValueError, match="single feature"):
            IndependenceIVRegressor().fit(np.column_stack([x, x]), y, z)
        with pytest.raises(ValueError):
            IndependenceIVRegressor().fit(x[:3], y[:3], z[:3])

    def test_non_finite(self, data):
        x, y, z = data
        x = x.copy()
        x[0] = np.nan
        with pytest.raises(ValueError):
            IndependenceIVRegressor().fit(x, y, z)

    @pytest.mark.parametrize("bad", [dict(grid_n=2), dict(q_alpha=1.0), dict(m=0), dict(max_steps=0),
                                     dict(stopping="oracle"), dict(x_range=(1.0, 0.0)), dict(kernel="box")])
    def test_bad_params(self, bad, data):
        with pytest.raises(ValueError):
            IndependenceIVRegressor(**bad).fit(*data)

    def test_bad_quantile(self, data):
        with pytest.raises(ValueError, match="quantile"):
            QuantileIVRegressor(quantile=1.0).fit(*data)

    def test_not_fitted(self):
        with pytest.raises(NotFittedError):
            ConditionalMeanIVRegressor().predict([0.5])
