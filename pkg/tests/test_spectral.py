import numpy as np
import pytest

from chlab import BasisIndex, CosineBasis, check_green_increments, green_kernel_eval
from chlab.spectral import (collocation_points, fit_loglog, phi_weights,
                            space_increment_integral, time_increment_integral,
                            window_square_integral, _eval_modes_1d)


class TestTransforms:
    @pytest.mark.parametrize("n", [16, 64, 256])
    def test_roundtrip_and_parseval(self, n, rng):
        basis = CosineBasis(n)
        for _ in range(5):
            g = rng.standard_normal(n)
            a = basis.to_spectral(g)
            back = basis.from_spectral(a)
            scale = np.abs(g).max()
            assert np.abs(back - g).max() / scale < 1e-12
            assert abs(basis.h * np.sum(g**2) - np.sum(a**2)) < 1e-12 * np.sum(a**2)

    def test_constant_field_hits_only_mode_zero(self):
        basis = CosineBasis(32)
        a = basis.to_spectral(np.full(32, 2.5))
        assert a[0] == pytest.approx(2.5 * np.sqrt(np.pi), abs=1e-13)
        assert np.abs(a[1:]).max() < 1e-13

    def test_cosine_hits_only_mode_one(self):
        basis = CosineBasis(32)
        a = basis.to_spectral(np.cos(collocation_points(32)))
        mask = np.ones(32, dtype=bool)
        mask[1] = False
        assert abs(a[1] - np.sqrt(np.pi / 2)) < 1e-13
        assert np.abs(a[mask]).max() < 1e-13

    def test_shape_mismatch_rejected(self):
        basis = CosineBasis(16)
        with pytest.raises(ValueError):
            basis.to_spectral(np.zeros(8))

    def test_roundtrip_2d(self, rng):
        basis = CosineBasis(16, dim=2)
        g = rng.standard_normal((16, 16))
        a = basis.to_spectral(g)
        assert np.abs(basis.from_spectral(a) - g).max() < 1e-12
        assert abs(basis.h * np.sum(g**2) - np.sum(a**2)) < 1e-12


class TestSemigroup:
    def test_identity_at_zero_time(self, rng):
        basis = CosineBasis(16)
        a = rng.standard_normal(16)
        assert np.array_equal(basis.semigroup_apply(a, 0.0), a)

    def test_mode_zero_invariant(self):
        basis = CosineBasis(16)
        a = np.zeros(16)
        a[0] = 3.0
        for t in (0.1, 5.0, 100.0):
            assert basis.semigroup_apply(a, t)[0] == 3.0

    def test_mode_one_halves_at_log_two(self):
        basis = CosineBasis(16)
        a = np.zeros(16)
        a[1] = 1.0
        out = basis.semigroup_apply(a, np.log(2.0))
        assert out[1] == pytest.approx(0.5, rel=1e-15)

    def test_semigroup_law(self, rng):
        basis = CosineBasis(32)
        a = rng.standard_normal(32)
        two_step = basis.semigroup_apply(basis.semigroup_apply(a, 0.3), 0.45)
        one_step = basis.semigroup_apply(a, 0.75)
        assert np.abs(two_step - one_step).max() < 1e-14

    def test_contraction(self, rng):
        basis = CosineBasis(32)
        a = rng.standard_normal(32)
        out = basis.semigroup_apply(a, 0.02)
        assert np.all(np.abs(out) <= np.abs(a) + 1e-15)

    def test_negative_time_rejected(self):
        basis = CosineBasis(16)
        with pytest.raises(ValueError):
            basis.semigroup_apply(np.zeros(16), -0.1)


class TestLaplacian:
    def test_constant_annihilated(self):
        # transform junk in high modes is amplified by mu <= (n-1)^2
        basis = CosineBasis(16)
        a = basis.to_spectral(np.ones(16))
        assert np.abs(basis.laplacian_apply(a)).max() < 1e-11

    @pytest.mark.parametrize("k,mu", [(1, 1.0), (2, 4.0)])
    def test_eigenmode(self, k, mu):
        basis = CosineBasis(32)
        x = collocation_points(32)
        a = basis.to_spectral(np.cos(k * x))
        out = basis.from_spectral(basis.laplacian_apply(a))
        assert np.abs(out + mu * np.cos(k * x)).max() < 1e-11


class TestBasisIndex:
    def test_eigenvalue_relation(self):
        basis = CosineBasis(8)
        idx = basis.index(3)
        assert idx.mu == 9.0 and idx.lam == 81.0

    def test_zero_mode(self):
        idx = CosineBasis(8).index(0)
        assert idx.mu == 0.0 and idx.lam == 0.0

    def test_invalid_relation_rejected(self):
        with pytest.raises(ValueError):
            BasisIndex(k=(1,), mu=1.0, lam=2.0)

    def test_2d_index(self):
        idx = CosineBasis(8, dim=2).index((1, 2))
        assert idx.mu == 5.0 and idx.lam == 25.0


class TestGreenKernel:
    def test_mass_one(self):
        # only the constant mode survives integration over y
        n = 64
        y = collocation_points(n)
        h = np.pi / n
        for t in (0.01, 0.1, 1.0):
            total = h * sum(green_kernel_eval(t, 1.0, yj, 32) for yj in y)
            assert abs(total - 1.0) < 1e-10

    def test_symmetry(self, rng):
        for _ in range(10):
            x, y = rng.random(2) * np.pi
            t = 0.05
            assert green_kernel_eval(t, x, y, 24) == pytest.approx(
                green_kernel_eval(t, y, x, 24), abs=1e-13)

    def test_long_time_limit(self):
        for x, y in [(0.3, 2.0), (1.0, 1.0)]:
            assert green_kernel_eval(50.0, x, y, 32) == pytest.approx(
                1.0 / np.pi, abs=1e-12)

    def test_zero_time_rejected(self):
        with pytest.raises(ValueError):
            green_kernel_eval(0.0, 1.0, 1.0, 16)

    def test_2d_symmetry(self):
        a = green_kernel_eval(0.05, (0.4, 1.1), (2.0, 0.7), 12, dim=2)
        b = green_kernel_eval(0.05, (2.0, 0.7), (0.4, 1.1), 12, dim=2)
        assert a == pytest.approx(b, abs=1e-13)


def exact_window_integral(y, t, n_modes):
    # closed-form mode-wise time integral; independent of the trapezoid path
    k = np.arange(n_modes, dtype=float)
    lam = k**4
    ey = _eval_modes_1d(k, y)
    weights = np.empty(n_modes)
    weights[0] = t
    weights[1:] = -np.expm1(-2.0 * lam[1:] * t) / (2.0 * lam[1:])
    return float(np.sum(weights * ey**2))


class TestGreenIncrements:
    def test_zero_space_increment(self):
        assert space_increment_integral(1.0, 1.0, 0.1, 64, 512) == 0.0

    def test_zero_time_increment(self):
        assert time_increment_integral(1.0, 0.0, 0.1, 64, 512) == 0.0

    def test_nonnegative_and_monotone_in_t(self):
        vals = [window_square_integral(1.2, 0.0, t, 64, 1024)
                for t in (0.001, 0.01, 0.1)]
        assert all(v >= 0 for v in vals)
        assert vals[0] < vals[1] < vals[2]

    def test_quadrature_matches_closed_form(self):
        y = 0.37 * np.pi
        for t in (1e-4, 1e-3, 1e-2):
            trap = window_square_integral(y, 0.0, t, 128, 2048)
            exact = exact_window_integral(y, t, 128)
            assert trap == pytest.approx(exact, rel=1e-4)

    def test_window_exponent_near_continuum_value(self):
        # oracle band around 1 - d/4 = 0.75 from the closed-form integrals
        widths = np.geomspace(1e-4, 1e-2, 7)
        exact_vals = [exact_window_integral(0.37 * np.pi, t, 128) for t in widths]
        slope_oracle, _ = fit_loglog(widths, exact_vals)
        assert 0.6 < slope_oracle < 0.9
        report = check_green_increments(n_modes=128, r_steps=1024)
        assert report.gamma_prime_hat == pytest.approx(slope_oracle, abs=0.02)

    def test_spatial_exponent_within_lemma_range(self):
        report = check_green_increments(n_modes=128, r_steps=1024)
        # continuum estimate allows gamma <= 2 (and < 4 - d); the fit sits
        # near the quadratic end for smooth offsets
        assert 1.5 < report.gamma_hat < 2.2
        assert report.c_space > 0 and report.c_window > 0

    def test_too_few_probes_rejected(self):
        with pytest.raises(ValueError):
            check_green_increments(n_modes=32, r_steps=256,
                                   window_widths=[1e-3, 1e-2])


def test_phi_weights_limits():
    lam = np.array([0.0, 1.0, 1e9])
    dt = 1e-3
    w = phi_weights(lam, dt)
    assert w[0] == dt
    assert w[1] == pytest.approx(-np.expm1(-dt), rel=1e-14)
    assert w[2] == pytest.approx(1e-9, rel=1e-6)
