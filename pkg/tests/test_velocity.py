import numpy as np
import pytest

from tumorlab.grid import RadialField, RadialGrid
from tumorlab.kinetics import KineticsSpec
from tumorlab.nutrient import solve_nutrient
from tumorlab.velocity import (radial_velocity, velocity_from_density,
                               velocity_from_integrand)


def test_constant_density_gives_linear_velocity(grid801):
    # g = 3 gives u(r) = r exactly
    u = velocity_from_integrand(3.0 * np.ones(grid801.size), grid801)
    assert np.max(np.abs(u - grid801.nodes)) <= 1e-12


def test_polynomial_density_quadrature_accuracy(grid801):
    # g = 5 r^2 gives u(r) = r^3
    r = grid801.nodes
    u = velocity_from_integrand(5.0 * r * r, grid801)
    # the quartic moment integrand is beyond Simpson exactness; the 1/r^2
    # prefactor amplifies the panel error near the origin
    assert np.max(np.abs(u - r ** 3)) <= 1e-8


def test_frame_adjusted_velocity_vanishes_at_endpoints(grid801):
    r = grid801.nodes
    field = velocity_from_density(np.cos(2 * r) - 0.4, grid801)
    assert field.w.values[0] == 0.0
    assert field.w.values[-1] == 0.0
    assert field.u_boundary == pytest.approx(field.u.values[-1])


def test_weighted_quotient_endpoint_limits(grid801):
    r = grid801.nodes
    g = 1.0 + r  # u = r/3 + r^2/4
    field = velocity_from_density(g, grid801)
    # w/(r(1-r)) -> w'(0) = u'(0) - u(1) and -w'(1) = -(u'(1) - u(1))
    assert field.w_over_weight.values[0] == pytest.approx(1.0 / 3.0 - 7.0 / 12.0,
                                                          abs=1e-10)
    assert field.w_over_weight.values[-1] == pytest.approx(
        -(1.0 / 3.0 + 0.5 - 7.0 / 12.0), abs=1e-10)
    # interior quotient stays bounded by the endpoint data
    assert np.all(np.isfinite(field.w_over_weight.values))


def test_velocity_from_state_negative_near_boundary(grid801, default_spec):
    # a depleted interior with p below the death/growth balance pulls inward
    ns = solve_nutrient(default_spec, 2.0, grid801)
    p = RadialField(grid801, np.full(grid801.size, 0.2))
    field = radial_velocity(p, ns, default_spec)
    assert field.u.values[0] == 0.0
    assert field.u_boundary < 0


def test_grid_mismatch_raises(default_spec, grid801, grid201):
    from tumorlab.errors import GridMismatchError
    ns = solve_nutrient(default_spec, 0.0, grid801)
    p = RadialField(grid201, np.full(grid201.size, 0.5))
    with pytest.raises(GridMismatchError):
        radial_velocity(p, ns, default_spec)
