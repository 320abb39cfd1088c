"""Field sampling, saddle Hessian draws, conditional fields, export."""

import math

import numpy as np
import pytest
import scipy.integrate
import scipy.special
import scipy.stats

from fieldtopo import covariance, sampler
from fieldtopo.errors import ConfigError

SQRT2 = math.sqrt(2.0)


def lag_products(sample, cells):
    """Mean of f(x) f(x + cells * h * e1) over the grid."""
    v = sample.values
    return float(np.mean(v[:-cells, :] * v[cells:, :]))


def eigenpair_moments(law, level, grid_max=12.0, n=1201):
    """Moments of (lambda1, lambda2) under the isotropic eigenvalue density
    q_l(x, y) ~ |x| y (y - x) exp(-[(x-m)^2 + (y-m)^2 + 2 tau (x-m)(y-m)] /
    (2 s^2)) on x < 0 < y, by tensor-grid trapezoid quadrature."""
    m = law.mu * level
    s2 = law.sigma2
    tau = law.tau
    x = np.linspace(-grid_max, 0.0, n)
    y = np.linspace(0.0, grid_max, n)
    X, Y = np.meshgrid(x, y, indexing="ij")
    expo = -((X - m) ** 2 + (Y - m) ** 2 + 2.0 * tau * (X - m) * (Y - m)) / (2.0 * s2)
    q = np.abs(X) * Y * (Y - X) * np.exp(expo)

    def mom(w):
        return float(np.trapezoid(np.trapezoid(w * q, y, axis=1), x))

    z = mom(np.ones_like(q))
    return {
        "m1": mom(X) / z, "m2": mom(Y) / z,
        "m11": mom(X * X) / z, "m22": mom(Y * Y) / z, "m12": mom(X * Y) / z,
    }


class TestGridSpec:
    def test_axis_symmetric_with_origin(self):
        g = sampler.GridSpec(radius=4.0, spacing=0.1)
        ax = g.axis()
        assert ax.size == g.n
        assert ax[g.origin_index] == 0.0
        assert np.allclose(ax, -ax[::-1])
        assert ax[-1] >= g.half_extent - 1e-12

    def test_validation(self):
        with pytest.raises(ConfigError):
            sampler.GridSpec(radius=0.0, spacing=0.1)
        with pytest.raises(ConfigError):
            sampler.GridSpec(radius=1.0, spacing=-0.1)


class TestUnconditional:
    def test_determinism(self, rpw, bf):
        g = sampler.GridSpec(radius=2.0, spacing=0.1, pad=0.5)
        for model in (rpw, bf):
            a = sampler.sample_field(model, g, seed=42, n_freqs=256)
            b = sampler.sample_field(model, g, seed=42, n_freqs=256)
            c = sampler.sample_field(model, g, seed=43, n_freqs=256)
            assert np.array_equal(a.values, b.values)
            assert not np.array_equal(a.values, c.values)

    @pytest.mark.parametrize("name", ["rpw", "bargmann-fock"])
    def test_mean_and_variance(self, name):
        model = covariance.get_model(name)
        g = sampler.GridSpec(radius=4.0, spacing=0.1)
        means, sqs = [], []
        for i in range(50):
            s = sampler.sample_field(model, g, seed=1000 + i, n_freqs=1024)
            means.append(float(s.values.mean()))
            sqs.append(float((s.values**2).mean()))
        for vals, target in ((means, 0.0), (sqs, 1.0)):
            vals = np.asarray(vals)
            se = vals.std(ddof=1) / math.sqrt(vals.size)
            assert abs(vals.mean() - target) < 3.0 * se + 1e-12

    def test_rpw_lag1_covariance(self, rpw):
        g = sampler.GridSpec(radius=4.0, spacing=0.1)
        lags = [lag_products(sampler.sample_field(rpw, g, seed=2000 + i), 10)
                for i in range(220)]
        lags = np.asarray(lags)
        se = lags.std(ddof=1) / math.sqrt(lags.size)
        assert abs(lags.mean() - scipy.special.jv(0, 1.0)) < 3.0 * se

    def test_bf_lag1_covariance(self, bf):
        g = sampler.GridSpec(radius=4.0, spacing=0.1)
        lags = [lag_products(sampler.sample_field(bf, g, seed=3000 + i, n_freqs=2048), 10)
                for i in range(220)]
        lags = np.asarray(lags)
        se = lags.std(ddof=1) / math.sqrt(lags.size)
        assert abs(lags.mean() - math.exp(-0.5)) < 3.0 * se

    def test_isotropy_of_lag(self, bf):
        g = sampler.GridSpec(radius=4.0, spacing=0.1)
        diffs = []
        for i in range(200):
            s = sampler.sample_field(bf, g, seed=4000 + i, n_freqs=2048)
            v = s.values
            lag_x = float(np.mean(v[:-10, :] * v[10:, :]))
            lag_y = float(np.mean(v[:, :-10] * v[:, 10:]))
            diffs.append(lag_x - lag_y)
        diffs = np.asarray(diffs)
        se = diffs.std(ddof=1) / math.sqrt(diffs.size)
        assert abs(diffs.mean()) < 3.0 * se + 1e-12

    def test_rpw_jet_law(self, rpw):
        # the analytic origin jet must carry the second-jet covariances:
        # Var f = 1, Var f_i = 1/2, Var f_11 = 3/8, Var f_12 = 1/8
        g = sampler.GridSpec(radius=0.5, spacing=0.1, pad=0.2)
        vals = np.array([
            [s.jet0.value, s.jet0.grad[0], s.jet0.grad[1],
             s.jet0.hess[0, 0], s.jet0.hess[0, 1]]
            for s in (sampler.sample_field(rpw, g, seed=5000 + i) for i in range(3000))
        ])
        var = vals.var(axis=0, ddof=1)
        for got, want in zip(var, (1.0, 0.5, 0.5, 0.375, 0.125)):
            se = want * math.sqrt(2.0 / 2999.0)
            assert abs(got - want) < 4.0 * se

    def test_rpw_trace_identity(self, rpw):
        # plane waves solve Helmholtz: f11 + f22 = -f exactly in the basis
        g = sampler.GridSpec(radius=0.5, spacing=0.1, pad=0.2)
        for i in range(20):
            jet = sampler.sample_field(rpw, g, seed=6000 + i).jet0
            assert abs(jet.hess[0, 0] + jet.hess[1, 1] + jet.value) < 1e-12

    def test_spectral_jet_consistency(self, bf):
        # analytic jet matches finite differences of the sampled grid
        g = sampler.GridSpec(radius=0.02, spacing=0.004, pad=0.02)
        s = sampler.sample_field(bf, g, seed=7, n_freqs=512)
        i = g.origin_index
        h = g.spacing
        v = s.values
        assert abs(s.jet0.value - v[i, i]) < 1e-12
        fd_gx = (v[i + 1, i] - v[i - 1, i]) / (2 * h)
        fd_h11 = (v[i + 1, i] - 2 * v[i, i] + v[i - 1, i]) / h**2
        fd_h12 = (v[i + 1, i + 1] - v[i + 1, i - 1] - v[i - 1, i + 1] + v[i - 1, i - 1]) / (4 * h * h)
        assert abs(s.jet0.grad[0] - fd_gx) < 5e-4
        assert abs(s.jet0.hess[0, 0] - fd_h11) < 5e-2
        assert abs(s.jet0.hess[0, 1] - fd_h12) < 5e-2

    def test_bessel_radius_limit(self, rpw):
        g = sampler.GridSpec(radius=65.0, spacing=0.1)
        with pytest.raises(ConfigError):
            sampler.sample_field(rpw, g, seed=1, method="bessel")

    def test_spacing_limit(self, rpw):
        g = sampler.GridSpec(radius=4.0, spacing=0.5)
        with pytest.raises(ConfigError):
            sampler.sample_field(rpw, g, seed=1)

    def test_bessel_requires_plane_wave(self, bf):
        g = sampler.GridSpec(radius=4.0, spacing=0.1)
        with pytest.raises(ConfigError):
            sampler.sample_field(bf, g, seed=1, method="bessel")

    def test_unknown_method(self, rpw):
        g = sampler.GridSpec(radius=4.0, spacing=0.1)
        with pytest.raises(ConfigError):
            sampler.sample_field(rpw, g, seed=1, method="chebyshev")

    def test_rpw_spectral_cross_check(self, rpw):
        # the cosine-superposition path must reproduce the Bessel-path law
        g = sampler.GridSpec(radius=4.0, spacing=0.1)
        lags = [lag_products(
            sampler.sample_field(rpw, g, seed=8000 + i, n_freqs=2048, method="spectral"), 10)
            for i in range(200)]
        lags = np.asarray(lags)
        se = lags.std(ddof=1) / math.sqrt(lags.size)
        assert abs(lags.mean() - scipy.special.jv(0, 1.0)) < 3.0 * se


class TestSaddleHessian:
    def test_isotropic_support(self, bf, bf_law):
        for i, level in enumerate((-1.0, 0.0, 1.0)):
            for j in range(60):
                d = sampler.sample_saddle_hessian(bf, bf_law, level, seed=100 * i + j)
                assert d.lambda1 < 0.0 < d.lambda2
                assert 0.0 <= d.theta < 2.0 * math.pi

    def test_rpw_support(self, rpw, rpw_law):
        for j in range(100):
            d = sampler.sample_saddle_hessian(rpw, rpw_law, -0.8, seed=j)
            assert d.lam > 0.8

    def test_rpw_hessian_reconstruction(self, rpw, rpw_law):
        level = 0.4
        d = sampler.sample_saddle_hessian(rpw, rpw_law, level, seed=5)
        H = d.hessian(level)
        assert abs(np.trace(H) + level) < 1e-12    # f11 + f22 = -f
        assert np.linalg.det(H) < 0.0
        eigs = np.linalg.eigvalsh(H)
        assert abs(max(eigs) - d.lam) < 1e-12 or abs(min(eigs) + level + d.lam) < 1e-12

    def test_bf_eigen_sum_matches_quadrature(self, bf, bf_law):
        mom = eigenpair_moments(bf_law, 0.0)
        draws = np.array([
            sampler.sample_saddle_hessian(bf, bf_law, 0.0, seed=i).as_triple()[:2]
            for i in range(2500)
        ])
        sums = draws.sum(axis=1)
        se = sums.std(ddof=1) / math.sqrt(sums.size)
        assert abs(sums.mean() - (mom["m1"] + mom["m2"])) < 3.0 * se

    def test_rpw_lambda_mean_matches_quadrature(self, rpw, rpw_law):
        level = 0.5
        lo = max(0.0, -level)
        dens = lambda x: x * (x + level) * (2 * x + level) * math.exp(-4 * x * (x + level))
        z, _ = scipy.integrate.quad(dens, lo, 20.0)
        m1, _ = scipy.integrate.quad(lambda x: x * dens(x), lo, 20.0)
        draws = np.array([
            sampler.sample_saddle_hessian(rpw, rpw_law, level, seed=i).lam
            for i in range(4000)
        ])
        se = draws.std(ddof=1) / math.sqrt(draws.size)
        assert abs(draws.mean() - m1 / z) < 3.0 * se


class TestConditionalField:
    @pytest.mark.parametrize("name", ["rpw", "bargmann-fock"])
    @pytest.mark.parametrize("level", [-1.0, 0.0, 1.0])
    def test_jet_pinned(self, name, level):
        model = covariance.get_model(name)
        g = sampler.GridSpec(radius=1.0, spacing=0.1, pad=0.5)
        for i in range(10):
            s = sampler.sample_conditional_field(model, level, g, seed=20 * i,
                                                 n_freqs=512)
            assert s.kind == "conditional"
            assert abs(s.at_origin() - level) < 1e-6
            assert np.max(np.abs(s.jet0.grad)) < 1e-9
            assert np.max(np.abs(s.jet0.hess - s.saddle.hessian(level))) < 1e-9
            assert np.linalg.det(s.jet0.hess) < 0.0

    def test_bilinear_gradient_at_fine_spacing(self, bf):
        # the discrete-gradient residual is the field's own cubic term,
        # ~ |f'''| h^2 / 6, so it beats the 1e-3 * h bound only once
        # h < 6e-3 / |f'''|; |f'''| is O(1)-O(10) for a unit-variance field
        g = sampler.GridSpec(radius=0.005, spacing=0.0005, pad=0.005)
        for i in range(5):
            s = sampler.sample_conditional_field(bf, 0.5, g, seed=i, n_freqs=512)
            j = g.origin_index
            h = g.spacing
            gx = (s.values[j + 1, j] - s.values[j - 1, j]) / (2 * h)
            gy = (s.values[j, j + 1] - s.values[j, j - 1]) / (2 * h)
            assert math.hypot(gx, gy) < 1e-3 * h

    def test_determinism(self, rpw, bf):
        g = sampler.GridSpec(radius=1.0, spacing=0.1, pad=0.5)
        for model in (rpw, bf):
            a = sampler.sample_conditional_field(model, 0.3, g, seed=9, n_freqs=256)
            b = sampler.sample_conditional_field(model, 0.3, g, seed=9, n_freqs=256)
            assert np.array_equal(a.values, b.values)

    def test_bf_variance_decomposition(self, bf, bf_law):
        """Var f~_l(t) = gamma(t,t) + Var(Z . beta(t)) at l = 1, t = (3, 0)."""
        level, t = 1.0, np.array([3.0, 0.0])
        fns = covariance.regression_fns(bf, bf_law)
        gtt = fns.gamma(t, t)
        b11, b22, b12 = fns.beta(t)
        mom = eigenpair_moments(bf_law, level)
        # Z . beta conditioned on the rotation angle is p*l1 + q*l2
        thetas = np.linspace(0.0, 2.0 * math.pi, 4096, endpoint=False)
        c, s = np.cos(thetas), np.sin(thetas)
        a_ = b11 * c * c + b22 * s * s
        b_ = b11 * s * s + b22 * c * c
        g_ = b12 * s * c
        p, q = a_ + g_, b_ - g_
        m = p * mom["m1"] + q * mom["m2"]
        m2 = (p * p * mom["m11"] + q * q * mom["m22"] + 2 * p * q * mom["m12"])
        var_zb = float(np.mean(m2) - np.mean(m) ** 2)
        target = gtt + var_zb

        rng = sampler.rng_from(77)
        vals = np.array([
            sampler.conditional_point_values(bf, level, t[None, :], rng,
                                             n_freqs=1024, law=bf_law)[0]
            for _ in range(1200)
        ])
        v = vals.var(ddof=1)
        se = v * math.sqrt(2.0 / (vals.size - 1))
        assert abs(v - target) < 3.0 * se

    def test_bf_far_field_variance(self, bf, bf_law):
        rng = sampler.rng_from(88)
        t = np.array([[8.0, 0.0]])
        vals = np.array([
            sampler.conditional_point_values(bf, 1.0, t, rng, n_freqs=1024,
                                             law=bf_law)[0]
            for _ in range(900)
        ])
        v = vals.var(ddof=1)
        se = v * math.sqrt(2.0 / (vals.size - 1))
        assert abs(v - 1.0) < 3.0 * se

    def test_level_negation_symmetry_ks(self, rpw, rpw_law):
        # -f~_{-l}(t) has the law of f~_l(t)
        level, t = 0.7, np.array([[1.1, 0.3]])
        rng1, rng2 = sampler.rng_from(91), sampler.rng_from(92)
        a = np.array([sampler.conditional_point_values(rpw, level, t, rng1,
                                                       law=rpw_law)[0]
                      for _ in range(600)])
        b = np.array([sampler.conditional_point_values(rpw, -level, t, rng2,
                                                       law=rpw_law)[0]
                      for _ in range(600)])
        res = scipy.stats.ks_2samp(a, -b)
        assert res.pvalue > 0.01

    def test_spacing_limit(self, bf):
        g = sampler.GridSpec(radius=2.0, spacing=0.4)
        with pytest.raises(ConfigError):
            sampler.sample_conditional_field(bf, 0.0, g, seed=1)


class TestExport:
    def test_binary_round_trip_unconditional(self, bf, tmp_path):
        g = sampler.GridSpec(radius=1.0, spacing=0.1, pad=0.5)
        s = sampler.sample_field(bf, g, seed=11, n_freqs=256)
        path = tmp_path / "field.bin"
        sampler.write_field(s, path)
        back = sampler.read_field(path)
        assert back.model_name == s.model_name
        assert back.seed == s.seed
        assert back.kind == "unconditional"
        assert back.grid == s.grid
        assert np.array_equal(back.values, s.values)

    @pytest.mark.parametrize("name", ["rpw", "bargmann-fock"])
    def test_binary_round_trip_conditional(self, name, tmp_path):
        model = covariance.get_model(name)
        g = sampler.GridSpec(radius=1.0, spacing=0.1, pad=0.5)
        s = sampler.sample_conditional_field(model, 0.4, g, seed=3, n_freqs=256)
        path = tmp_path / "field.bin"
        sampler.write_field(s, path)
        back = sampler.read_field(path)
        assert back.kind == "conditional"
        assert back.level == 0.4
        assert back.saddle.variant == s.saddle.variant
        assert np.allclose(back.saddle.as_triple(), s.saddle.as_triple())
        assert np.array_equal(back.values, s.values)

    def test_csv_export(self, bf, tmp_path):
        g = sampler.GridSpec(radius=0.2, spacing=0.1, pad=0.1)
        s = sampler.sample_field(bf, g, seed=5, n_freqs=128)
        path = tmp_path / "field.csv"
        sampler.write_field_csv(s, path)
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "x,y,value"
        assert len(lines) == 1 + g.n * g.n
        x, y, v = lines[1].split(",")
        assert float(v) == s.values[0, 0]
