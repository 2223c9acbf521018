import numpy as np
import pytest

from chlab import (ControlPath, Grid, GridField, Trajectory, control_norm_sq,
                   holder_modulus, holder_norm, holder_norm_parts, lp_norm,
                   zero_control)
from chlab.fields import lp_norm_batch
from chlab.spectral import CosineBasis


def make_traj(values, dt):
    values = np.asarray(values, dtype=float)
    times = np.arange(values.shape[0]) * dt
    return Trajectory(times=times, values=values, dim=1)


class TestLpNorm:
    def test_constant(self):
        for p in (1.0, 2.0, 4.0):
            g = GridField(np.full(32, -3.0))
            assert lp_norm(g, p) == pytest.approx(3.0 * np.pi ** (1 / p), rel=1e-13)

    def test_zero(self):
        assert lp_norm(GridField(np.zeros(16)), 4.0) == 0.0

    def test_p_below_one_rejected(self):
        with pytest.raises(ValueError):
            lp_norm(GridField(np.ones(8)), 0.5)

    def test_matches_parseval_at_p_two(self, rng):
        basis = CosineBasis(64)
        g = rng.standard_normal(64)
        spectral = np.sqrt(np.sum(basis.to_spectral(g) ** 2))
        assert lp_norm(GridField(g), 2.0) == pytest.approx(spectral, rel=1e-12)

    def test_homogeneous(self, rng):
        g = rng.standard_normal(32)
        assert lp_norm(GridField(4.0 * g), 3.0) == pytest.approx(
            4.0 * lp_norm(GridField(g), 3.0), rel=1e-12)

    def test_triangle_inequality(self, rng):
        for _ in range(20):
            a, b = rng.standard_normal((2, 32))
            for p in (1.0, 2.0, 4.0):
                assert lp_norm(GridField(a + b), p) <= \
                    lp_norm(GridField(a), p) + lp_norm(GridField(b), p) + 1e-12

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError):
            GridField(np.array([1.0, np.inf]))


def brute_force_holder(values, dt, alpha, p, h):
    # independent all-pairs evaluation with plain loops
    m1 = values.shape[0]
    sup_term = max(float((h * np.sum(np.abs(values[i]) ** p)) ** (1 / p))
                   for i in range(m1))
    inc = 0.0
    for i in range(m1):
        for j in range(i + 1, m1):
            norm = float((h * np.sum(np.abs(values[j] - values[i]) ** p)) ** (1 / p))
            inc = max(inc, norm / ((j - i) * dt) ** alpha)
    return sup_term, inc


class TestHolderNorm:
    def test_constant_trajectory(self):
        traj = make_traj(np.tile(np.ones(8), (5, 1)), 0.1)
        sup_term, inc, flag = holder_norm_parts(traj, 0.3, 2.0)
        assert inc == 0.0 and not flag
        assert holder_norm(traj, 0.3, 2.0) == pytest.approx(sup_term)

    def test_linear_in_time(self, rng):
        # u(t) = t g: sup term T ||g||, increment pair maximized at full gap
        g = rng.standard_normal(16)
        dt, m = 0.05, 8
        traj = make_traj(np.outer(np.arange(m + 1) * dt, g), dt)
        T = m * dt
        gp = lp_norm(GridField(g), 4.0)
        alpha = 0.3
        sup_term, inc, _ = holder_norm_parts(traj, alpha, 4.0)
        assert sup_term == pytest.approx(T * gp, rel=1e-12)
        assert inc == pytest.approx(gp * T ** (1 - alpha), rel=1e-12)

    def test_matches_brute_force(self, rng):
        values = rng.standard_normal((9, 12))
        traj = make_traj(values, 0.02)
        for alpha, p in [(0.2, 2.0), (0.3, 4.0)]:
            sup_b, inc_b = brute_force_holder(values, 0.02, alpha, p, traj.h)
            sup_term, inc, _ = holder_norm_parts(traj, alpha, p)
            assert sup_term == pytest.approx(sup_b, rel=1e-12)
            assert inc == pytest.approx(inc_b, rel=1e-12)

    def test_increment_term_alpha_relation(self, rng):
        # inc(a2) >= T^{a1 - a2} inc(a1) for a2 > a1: the maximizing pair of
        # the smaller exponent is admissible for the larger one
        values = rng.standard_normal((12, 8))
        traj = make_traj(values, 0.05)
        T = traj.times[-1]
        a1, a2 = 0.2, 0.45
        _, inc1, _ = holder_norm_parts(traj, a1, 2.0)
        _, inc2, _ = holder_norm_parts(traj, a2, 2.0)
        assert inc2 >= T ** (a1 - a2) * inc1 - 1e-12

    def test_single_time_flagged(self):
        traj = make_traj(np.ones((1, 8)), 0.1)
        sup_term, inc, flag = holder_norm_parts(traj, 0.3, 2.0)
        assert flag and inc == 0.0 and sup_term > 0

    def test_alpha_out_of_range(self):
        traj = make_traj(np.ones((3, 8)), 0.1)
        with pytest.raises(ValueError):
            holder_norm(traj, 1.2, 2.0)


class TestHolderModulus:
    def test_constant_trajectory_zero(self):
        traj = make_traj(np.tile(np.ones(8), (6, 1)), 0.1)
        assert holder_modulus(traj, 0.2, 0.35, 2.0) == 0.0

    def test_full_window_equals_increment_term(self, rng):
        values = rng.standard_normal((10, 8))
        traj = make_traj(values, 0.05)
        T = traj.times[-1]
        _, inc, _ = holder_norm_parts(traj, 0.25, 2.0)
        assert holder_modulus(traj, 0.25, T, 2.0) == pytest.approx(inc, rel=1e-13)

    def test_decreasing_under_window_refinement(self):
        # smooth sampled trajectory: small-gap quotients are smaller
        dt, m = 0.025, 16
        t = np.arange(m + 1) * dt
        x = (np.arange(8) + 0.5) * np.pi / 8
        values = np.sin(2 * t)[:, None] * np.cos(x)[None, :]
        traj = make_traj(values, dt)
        T = t[-1]
        vals = [holder_modulus(traj, 0.3, d, 2.0) for d in (T, T / 2, T / 4)]
        assert vals[0] >= vals[1] >= vals[2]
        assert vals[2] < vals[0]

    def test_window_below_dt_rejected(self):
        traj = make_traj(np.ones((5, 8)), 0.1)
        with pytest.raises(ValueError):
            holder_modulus(traj, 0.3, 0.1, 2.0)


class TestControlNorm:
    def test_zero(self):
        grid = Grid(n=8, dt=0.05, T=0.5)
        assert control_norm_sq(zero_control(grid)) == 0.0

    def test_unit_control_measures_cylinder(self):
        grid = Grid(n=8, dt=0.05, T=0.5)
        v = ControlPath(np.ones((grid.steps, 8)), dt=grid.dt)
        assert control_norm_sq(v) == pytest.approx(0.5 * np.pi, rel=1e-13)

    def test_refinement_oracle(self):
        # smooth control sampled on M and 2M grids: quadratures agree to O(dt)
        T, n = 0.5, 8
        x = (np.arange(n) + 0.5) * np.pi / n

        def sampled(steps):
            tm = (np.arange(steps) + 0.5) * (T / steps)
            return ControlPath(np.sin(2 * np.pi * tm / T)[:, None]
                               * np.cos(x)[None, :], dt=T / steps)

        coarse = control_norm_sq(sampled(40))
        fine = control_norm_sq(sampled(80))
        assert abs(coarse - fine) < 5.0 * (T / 40)

    def test_energy_triangle(self, rng):
        grid = Grid(n=8, dt=0.05, T=0.5)
        a = ControlPath(rng.standard_normal((grid.steps, 8)), dt=grid.dt)
        b = ControlPath(rng.standard_normal((grid.steps, 8)), dt=grid.dt)
        ab = ControlPath(a.values + b.values, dt=grid.dt)
        assert np.sqrt(control_norm_sq(ab)) <= \
            np.sqrt(control_norm_sq(a)) + np.sqrt(control_norm_sq(b)) + 1e-12

    def test_ball_tagging(self):
        grid = Grid(n=8, dt=0.05, T=0.5)
        v = ControlPath(np.ones((grid.steps, 8)), dt=grid.dt, bound=1.0)
        assert not v.in_ball()
        v2 = ControlPath(np.ones((grid.steps, 8)), dt=grid.dt, bound=2.0)
        assert v2.in_ball()


class TestTrajectoryType:
    def test_nonuniform_grid_rejected(self):
        with pytest.raises(ValueError):
            Trajectory(times=np.array([0.0, 0.1, 0.3]), values=np.zeros((3, 4)))

    def test_batch_norms(self, rng):
        flat = rng.standard_normal((3, 5, 8))
        h = np.pi / 8
        out = lp_norm_batch(flat, 4.0, h)
        assert out.shape == (3, 5)
        assert out[1, 2] == pytest.approx(lp_norm(GridField(flat[1, 2]), 4.0))
