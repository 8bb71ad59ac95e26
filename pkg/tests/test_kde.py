import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from npiv.kde import (DensityModel, KernelSpec, Sample, default_bandwidth, density_3d, density_dy,
                      eval_kernel, eval_kernel_cdf, eval_kernel_derivative, kernel_l2_sq, marginals,
                      nadaraya_watson, smoothed_cdf_y)
from npiv.numerics import Grid1D, Grid3, trapezoid_integrate, GridFn
from npiv.simulation import Scenario, exact_density_field, generate_sample

GAUSS = KernelSpec()
EPAN = KernelSpec("epanechnikov")


def cube(n, lo=-1.0, hi=1.0):
    return Grid3.cube((lo, hi), (lo, hi), (lo, hi), n)


class TestKernels:
    def test_values(self):
        assert eval_kernel(GAUSS, 0.0) == pytest.approx(0.3989423, abs=1e-7)
        assert eval_kernel(EPAN, 2.0) == 0.0
        assert eval_kernel(EPAN, 0.0) == 0.75
        assert eval_kernel_cdf(GAUSS, 0.0) == 0.5
        assert eval_kernel_cdf(EPAN, -3.0) == 0.0 and eval_kernel_cdf(EPAN, 3.0) == 1.0

    @pytest.mark.parametrize("spec", [GAUSS, EPAN])
    def test_moments(self, spec):
        u = np.linspace(-8, 8, 160001)
        k = eval_kernel(spec, u)
        assert np.trapezoid(k, u) == pytest.approx(1.0, abs=1e-6)
        assert np.trapezoid(u * k, u) == pytest.approx(0.0, abs=1e-9)
        assert np.trapezoid(k * k, u) == pytest.approx(kernel_l2_sq(spec), abs=1e-6)

    def test_derivative_and_cdf_consistent(self):
        u = np.linspace(-4, 4, 81)
        e = 1e-6
        fd = (eval_kernel(GAUSS, u + e) - eval_kernel(GAUSS, u - e)) / (2 * e)
        assert np.allclose(eval_kernel_derivative(GAUSS, u), fd, atol=1e-8)
        fd_cdf = (eval_kernel_cdf(EPAN, u + e) - eval_kernel_cdf(EPAN, u - e)) / (2 * e)
        inner = np.abs(np.abs(u) - 1) > 1e-3
        assert np.allclose(fd_cdf[inner], eval_kernel(EPAN, u)[inner], atol=1e-6)
        v = np.linspace(-8, 8, 160001)
        assert np.trapezoid(eval_kernel_derivative(GAUSS, v) ** 2, v) == pytest.approx(
            kernel_l2_sq(GAUSS, derivative=True), abs=1e-6)

    def test_rejections(self):
        with pytest.raises(ValueError):
            KernelSpec("triangular")
        with pytest.raises(ValueError):
            KernelSpec(order=4)
        with pytest.raises(ValueError):
            eval_kernel_derivative(EPAN, 0.0)


class TestSample:
    def test_validation(self):
        with pytest.raises(ValueError):
            Sample(np.ones((4, 2)))
        with pytest.raises(ValueError):
            Sample(np.array([[0.0, np.nan, 1.0]]))
        with pytest.raises(ValueError):
            DensityModel(Sample(np.zeros((1, 3))), GAUSS, 0.0)

    def test_bandwidth_rule(self):
        rng = np.random.default_rng(1)
        r = rng.standard_normal((64, 3))
        expected = np.sqrt(np.mean(r.var(axis=0, ddof=1))) * 64 ** (-1 / 6)
        assert default_bandwidth(Sample(r)) == pytest.approx(expected)
        assert default_bandwidth(Sample(r), 2.0) == pytest.approx(2 * expected)


class TestDensity:
    def test_single_point_peak(self):
        h = 0.2
        g = cube(5)
        f = density_3d(DensityModel(Sample(np.zeros((1, 3))), GAUSS, h), g)
        assert f.values[2, 2, 2] == pytest.approx((0.3989423 / h) ** 3, rel=1e-6)
        assert f.values.max() == f.values[2, 2, 2]

    def test_brute_force(self):
        rng = np.random.default_rng(3)
        recs = rng.uniform(-0.5, 0.5, (7, 3))
        h = 0.3
        g = cube(4)
        model = DensityModel(Sample(recs), GAUSS, h)
        phi = lambda t: np.exp(-0.5 * t * t) / np.sqrt(2 * np.pi)
        f, df, F = density_3d(model, g).values, density_dy(model, g).values, smoothed_cdf_y(model, g).values
        from scipy.stats import norm
        for i, y in enumerate(g.gy.nodes):
            for j, x in enumerate(g.gx.nodes):
                for k, z in enumerate(g.gz.nodes):
                    kxz = phi((x - recs[:, 1]) / h) * phi((z - recs[:, 2]) / h) / h ** 2
                    uy = (y - recs[:, 0]) / h
                    assert f[i, j, k] == pytest.approx(np.mean(phi(uy) / h * kxz), rel=1e-12)
                    assert df[i, j, k] == pytest.approx(np.mean(-uy * phi(uy) / h ** 2 * kxz), rel=1e-10, abs=1e-14)
                    assert F[i, j, k] == pytest.approx(np.mean(norm.cdf(uy) * kxz), rel=1e-12)

    def test_duplicates_double(self):
        g = cube(5)
        one = density_3d(DensityModel(Sample(np.array([[0.1, 0.2, -0.3]])), GAUSS, 0.3), g)
        two = density_3d(DensityModel(Sample(np.array([[0.1, 0.2, -0.3]] * 2)), GAUSS, 0.3), g)
        assert np.allclose(one.values, two.values)

    def test_mass(self):
        g = cube(41, -3.0, 3.0)
        rng = np.random.default_rng(0)
        model = DensityModel(Sample(rng.uniform(-0.5, 0.5, (20, 3))), GAUSS, 0.3)
        f = density_3d(model, g).values
        w = g.gy.weights
        assert np.einsum("i,j,k,ijk->", w, w, w, f) == pytest.approx(1.0, abs=1e-6)

    def test_derivative_zero_at_point(self):
        g = cube(5)
        df = density_dy(DensityModel(Sample(np.zeros((1, 3))), GAUSS, 0.2), g)
        assert df.values[2, 2, 2] == pytest.approx(0.0, abs=1e-12)
        assert np.allclose(df.values[:2], -df.values[:-3:-1])

    def test_derivative_matches_fd(self):
        rng = np.random.default_rng(2)
        model = DensityModel(Sample(rng.uniform(-0.5, 0.5, (30, 3))), GAUSS, 0.25)
        base = cube(6)
        df = density_dy(model, base).values
        errs = []
        for e in (1e-2, 5e-3):
            up = Grid3(Grid1D(-1 + e, 1 + e, 6), base.gx, base.gz)
            dn = Grid3(Grid1D(-1 - e, 1 - e, 6), base.gx, base.gz)
            fd = (density_3d(model, up).values - density_3d(model, dn).values) / (2 * e)
            errs.append(np.max(np.abs(fd - df)))
        assert errs[0] < 1e-2 * np.max(np.abs(df))
        assert errs[1] < 0.3 * errs[0]  # second order in the step

    def test_epanechnikov_derivative_unsupported(self):
        model = DensityModel(Sample(np.zeros((1, 3))), EPAN, 0.2)
        with pytest.raises(ValueError):
            density_dy(model, cube(3))
        assert marginals(model, cube(3)).df_yx_dy is None

    def test_cdf_limits(self):
        g = Grid3(Grid1D(-5, 5, 3), Grid1D(-1, 1, 5), Grid1D(-1, 1, 5))
        model = DensityModel(Sample(np.zeros((1, 3))), GAUSS, 0.2)
        F = smoothed_cdf_y(model, g).values
        m = marginals(model, g)
        assert np.allclose(F[-1], m.f_xz, rtol=1e-12)
        assert np.allclose(F[0], 0.0, atol=1e-12)
        assert np.allclose(F[1], 0.5 * m.f_xz)

    def test_marginals_consistent(self):
        g = cube(61, -3.0, 3.0)
        rng = np.random.default_rng(5)
        model = DensityModel(Sample(rng.uniform(-0.5, 0.5, (10, 3))), GAUSS, 0.3)
        f = density_3d(model, g).values
        m = marginals(model, g)
        w = g.gy.weights
        assert np.allclose(np.einsum("i,ijk->jk", w, f), m.f_xz, atol=1e-6)
        assert np.allclose(np.einsum("k,ijk->ij", w, f), m.f_yx, atol=1e-6)
        assert np.allclose(m.f_xz @ w, m.f_x.values, atol=1e-6)
        assert trapezoid_integrate(m.f_z) == pytest.approx(1.0, abs=1e-6)
        one = DensityModel(Sample(np.zeros((1, 3))), GAUSS, 0.2)
        assert marginals(one, g).f_z.values.max() == pytest.approx(0.3989423 / 0.2, rel=1e-6)

    def test_nadaraya_watson(self):
        rng = np.random.default_rng(0)
        z = rng.uniform(0, 1, 400)
        model = DensityModel(Sample.from_columns(2 * z + 1, z, z), GAUSS, 0.05)
        est = nadaraya_watson(model, Grid1D(0.2, 0.8, 7))
        assert np.allclose(est.values, 2 * est.grid.nodes + 1, atol=0.02)

    @given(arrays(float, (6, 3), elements=st.floats(-1, 1)), st.floats(0.05, 1.0))
    def test_nonnegative_and_monotone(self, recs, h):
        model = DensityModel(Sample(recs), GAUSS, h)
        g = cube(5)
        assert np.all(density_3d(model, g).values >= 0)
        F = smoothed_cdf_y(model, g).values
        assert np.all(np.diff(F, axis=0) >= -1e-15)

    @given(arrays(float, (6, 3), elements=st.floats(-1, 1)), st.randoms())
    def test_permutation_invariant(self, recs, rnd):
        perm = list(range(6))
        rnd.shuffle(perm)
        g = cube(4)
        a = density_3d(DensityModel(Sample(recs), GAUSS, 0.3), g).values
        b = density_3d(DensityModel(Sample(recs[perm]), GAUSS, 0.3), g).values
        assert np.allclose(a, b, rtol=1e-12, atol=1e-300)


def test_plugin_consistency():
    """The L2 distance to the exact density shrinks as the sample grows."""
    scn = Scenario()
    g = scn.grid(20)
    exact = exact_density_field(scn, g).f_yxz.values
    w = g.gy.weights, g.gx.weights, g.gz.weights

    def dist(n):
        s = generate_sample(scn, n, 0)
        f = density_3d(DensityModel(s, GAUSS, default_bandwidth(s)), g).values
        return np.sqrt(np.einsum("i,j,k,ijk->", *w, (f - exact) ** 2))

    d = [dist(n) for n in (1000, 4000, 16000, 64000)]
    assert np.all(np.diff(d) < 0)
    assert d[-1] < 0.75 * d[0]
