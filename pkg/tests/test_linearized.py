import numpy as np
import pytest

from tumorlab.grid import RadialField
from tumorlab.linearized import (LinearPropagator, apply_B, apply_F,
                                 build_operators, decay_ensemble, fit_decay,
                                 laplace_consistency, random_smooth_field,
                                 resolvent_apply, solve_linearized)


def test_growth_bound_negative(operators801):
    # the multiplier a(r) stays strictly negative for the default rates
    assert operators801.omega0 < 0
    assert np.all(operators801.a.values < 0)


def test_zero_sensitivity_kills_coupling(stationary801, default_spec):
    zero = RadialField(stationary801.grid,
                       np.zeros(stationary801.grid.size))
    ops = build_operators(stationary801, default_spec, c_z=zero)
    assert np.max(np.abs(ops.b.values)) == 0.0
    assert ops.kappa == 0.0


def test_nonlocal_operators_linear(operators801, rng):
    q1 = random_smooth_field(operators801.grid, rng)
    q2 = random_smooth_field(operators801.grid, rng)
    combo = q1.with_values(2.0 * q1.values - 3.0 * q2.values)
    lhs = apply_B(operators801, combo).values
    rhs = 2.0 * apply_B(operators801, q1).values - 3.0 * apply_B(operators801, q2).values
    assert np.max(np.abs(lhs - rhs)) <= 1e-14
    assert apply_F(operators801, combo) == pytest.approx(
        2.0 * apply_F(operators801, q1) - 3.0 * apply_F(operators801, q2))


def test_nonlocal_operator_vanishes_at_origin(operators801, rng):
    q = random_smooth_field(operators801.grid, rng)
    assert apply_B(operators801, q).values[0] == 0.0


def test_solver_is_linear_in_initial_data(operators801, rng):
    prop = LinearPropagator(operators801, 1e-2)
    phi0 = random_smooth_field(operators801.grid, rng, amplitude=1e-2)
    t1 = solve_linearized(operators801, (phi0, 1e-3), 2.0, 1e-2,
                          propagator=prop)
    t2 = solve_linearized(operators801,
                          (phi0.with_values(2 * phi0.values), 2e-3), 2.0,
                          1e-2, propagator=prop)
    gap = np.max(np.abs(t2.states[-1].p.values - 2 * t1.states[-1].p.values))
    assert gap <= 1e-13
    assert abs(t2.states[-1].z - 2 * t1.states[-1].z) <= 1e-13


def test_perturbations_decay(operators801, rng):
    phi0 = random_smooth_field(operators801.grid, rng, amplitude=1e-2)
    traj = solve_linearized(operators801, (phi0, 1e-3), 30.0, 1e-2)
    assert traj.norm_x[-1] < 0.5 * traj.norm_x[0]
    rep = fit_decay(traj)
    assert rep.mu_fit > 0


def test_fit_decay_recovers_synthetic_rate(operators801):
    times = np.linspace(0.0, 50.0, 501)

    class Fake:
        pass

    traj = Fake()
    traj.times = times
    traj.norm_x = 3.0 * np.exp(-0.12 * times)
    traj.norm_x0 = traj.norm_x
    rep = fit_decay(traj, "X")
    assert rep.mu_fit == pytest.approx(0.12, abs=1e-10)
    assert rep.K_fit == pytest.approx(3.0, rel=1e-8)
    assert rep.r2 >= 0.999
    assert rep.valid


def test_fit_decay_flags_short_windows(operators801):
    times = np.linspace(0.0, 5.0, 51)

    class Fake:
        pass

    traj = Fake()
    traj.times = times
    traj.norm_x = np.exp(-0.05 * times)
    traj.norm_x0 = traj.norm_x
    rep = fit_decay(traj, "X")
    assert rep.decades < 2.0
    assert "decades" in rep.note


def test_ensemble_rates_cluster(operators801):
    ens = decay_ensemble(operators801, n_runs=4, t_end=80.0, seed=5)
    mus = [pair[0].mu_fit for pair in ens]
    assert all(m > 0 for m in mus)
    assert max(mus) / min(mus) <= 1.3


def test_resolvent_constant_coefficient_identity(operators801, stationary801):
    grid = stationary801.grid
    a0 = RadialField(grid, np.zeros(grid.size))
    f1 = RadialField(grid, np.ones(grid.size))
    q = resolvent_apply(stationary801.u_star, a0, 0.8, f1)
    assert np.max(np.abs(q.values + 1.0 / 0.8)) <= 1e-9


def test_resolvent_residual_and_norm_bound(operators801, stationary801, rng):
    f = random_smooth_field(operators801.grid, rng)
    lam = operators801.omega0 + 1.0
    q, res = resolvent_apply(stationary801.u_star, operators801.a, lam, f,
                             return_residual=True)
    assert res <= 1e-6
    assert np.max(np.abs(q.values)) <= np.max(np.abs(f.values)) / 1.0 + 1e-9


def test_resolvent_rejects_spectrum(operators801, stationary801, rng):
    f = random_smooth_field(operators801.grid, rng)
    with pytest.raises(ValueError):
        resolvent_apply(stationary801.u_star, operators801.a,
                        operators801.omega0 - 0.1, f)


def test_resolvent_complex_argument(operators801, stationary801, rng):
    f = random_smooth_field(operators801.grid, rng)
    lam = operators801.omega0 + 1.0 + 0.7j
    qr, qi = resolvent_apply(stationary801.u_star, operators801.a, lam, f)
    assert np.all(np.isfinite(qr.values))
    assert np.max(np.abs(qi.values)) > 0


def test_laplace_transform_consistency(operators801, stationary801, rng):
    q0 = random_smooth_field(operators801.grid, rng)
    lam = operators801.omega0 + 1.0
    disc = laplace_consistency(stationary801.u_star, operators801.a, lam, q0)
    assert disc <= 1e-4
