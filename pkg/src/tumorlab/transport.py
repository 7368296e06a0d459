"""Nonlinear evolution of the reduced tumor system by characteristics.

The state is U = (p, z): the proliferating fraction on [0,1] and the log
tumor radius.  Along characteristics dr/dt = w(r,t) the p-equation becomes
dp/dt = f(r, p, z), and dz/dt = u(1, t).  Particles are advanced with a
classical 4-stage Runge-Kutta step; the nutrient problem and the velocity
quadrature are re-evaluated at every stage (warm-started, z moves slowly).
The endpoints r=0 and r=1 are characteristic lines and stay pinned.

Particles drift toward the origin (w < 0 in the interior), so the bundle is
resampled onto the reference grid with a monotone cubic whenever spacing
degrades.  Norms: normX = sup|p - p_*| + |z - z_*|; normX0 adds the weighted
derivative sup r(1-r)|d(p - p_*)/dr|.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator

from .errors import GridMismatchError, SolverError
from .grid import RadialField, derivative_values, radial_average
from .kinetics import eval_rates
from .nutrient import solve_nutrient

DT_MAX_DEFAULT = 1e-2
REGRID_MIN_FACTOR = 0.2
REGRID_MAX_FACTOR = 2.5
P_ESCAPE_TOL = 1e-9


@dataclass(frozen=True)
class TumorState:
    t: float
    p: RadialField
    z: float

    @property
    def q(self):
        """Quiescent fraction, derived: q = 1 - p identically."""
        return self.p.with_values(1.0 - self.p.values)


@dataclass(frozen=True)
class CharacteristicBundle:
    positions: np.ndarray
    values: np.ndarray
    ref_grid: object

    def __post_init__(self):
        if np.any(np.diff(self.positions) < -1e-12):
            raise SolverError("characteristic crossing in bundle")


@dataclass
class Trajectory:
    times: np.ndarray
    states: list
    norm_x: np.ndarray
    norm_x0: np.ndarray
    mass_residual: np.ndarray
    reference: object = None


class NutrientCache:
    """Warm-started nutrient solves on a fixed reference grid."""

    def __init__(self, spec, grid):
        self.spec = spec
        self.grid = grid
        self._c_last = None
        self._z_last = None
        self._sol = None

    def solve(self, z):
        if self._sol is not None and z == self._z_last:
            return self._sol
        sol = solve_nutrient(self.spec, z, self.grid, c_init=self._c_last)
        self._c_last = sol.c.values
        self._z_last = z
        self._sol = sol
        return sol


def _stage_rates(spec, cache, positions, values, z):
    """w, f and u(1) at the particle positions for the current state."""
    ns = cache.solve(z)
    c = np.clip(ns.c(positions), 0.0, 1.0)
    rv = eval_rates(spec, c)
    g = -rv.kd + rv.km * values
    u = radial_average(g, positions)
    u1 = u[-1]
    w = u - positions * u1
    w[0] = 0.0
    w[-1] = 0.0
    f = rv.kp + (rv.km - rv.kn) * values - rv.km * values * values
    return w, f, u1


def _rk4(spec, cache, positions, values, z, dt):
    """One Runge-Kutta step of the full particle system."""
    k1w, k1f, k1u = _stage_rates(spec, cache, positions, values, z)
    k2w, k2f, k2u = _stage_rates(
        spec, cache, positions + 0.5 * dt * k1w, values + 0.5 * dt * k1f,
        z + 0.5 * dt * k1u)
    k3w, k3f, k3u = _stage_rates(
        spec, cache, positions + 0.5 * dt * k2w, values + 0.5 * dt * k2f,
        z + 0.5 * dt * k2u)
    k4w, k4f, k4u = _stage_rates(
        spec, cache, positions + dt * k3w, values + dt * k3f, z + dt * k3u)
    new_r = positions + dt / 6.0 * (k1w + 2 * k2w + 2 * k3w + k4w)
    new_p = values + dt / 6.0 * (k1f + 2 * k2f + 2 * k3f + k4f)
    new_z = z + dt / 6.0 * (k1u + 2 * k2u + 2 * k3u + k4u)
    new_r[0] = 0.0
    new_r[-1] = 1.0
    if np.any(np.diff(new_r) < -1e-12):
        raise SolverError("characteristic crossing during step")
    if np.any(new_p < -P_ESCAPE_TOL) or np.any(new_p > 1.0 + P_ESCAPE_TOL):
        raise SolverError(
            f"p escaped [0,1]: range [{new_p.min():.3e}, {new_p.max():.3e}]"
        )
    np.clip(new_p, 0.0, 1.0, out=new_p)
    return new_r, new_p, new_z


def regrid(bundle):
    """Resample bundle values back onto the reference grid (monotone cubic)."""
    if np.any(np.diff(bundle.positions) <= 0):
        raise SolverError("non-monotone particle positions in regrid")
    interp = PchipInterpolator(bundle.positions, bundle.values)
    vals = interp(bundle.ref_grid.nodes)
    return CharacteristicBundle(
        positions=bundle.ref_grid.nodes.copy(),
        values=vals,
        ref_grid=bundle.ref_grid,
    )


def _needs_regrid(positions, h_ref):
    gaps = np.diff(positions)
    return gaps.min() < REGRID_MIN_FACTOR * h_ref or gaps.max() > REGRID_MAX_FACTOR * h_ref


def step(state, dt, spec, cache=None, dt_max=DT_MAX_DEFAULT):
    """Advance a grid state by one step and resample back to its grid."""
    if dt > dt_max * (1 + 1e-12):
        raise ValueError(f"dt={dt} exceeds dt_max={dt_max}")
    grid = state.p.grid
    if cache is None:
        cache = NutrientCache(spec, grid)
    r, p, z = _rk4(spec, cache, grid.nodes.copy(), state.p.values.copy(), state.z, dt)
    bundle = CharacteristicBundle(r, p, grid)
    bundle = regrid(bundle)
    return TumorState(t=state.t + dt, p=RadialField(grid, bundle.values), z=z)


def norm_X(state, ref):
    """sup |p - p_*| + |z - z_*|."""
    if state.p.grid != ref.p_star.grid:
        raise GridMismatchError("state and reference live on different grids")
    return float(
        np.max(np.abs(state.p.values - ref.p_star.values)) + abs(state.z - ref.z_star)
    )


def norm_X0(state, ref):
    """normX plus the weighted derivative term sup r(1-r)|d(p - p_*)/dr|."""
    if state.p.grid != ref.p_star.grid:
        raise GridMismatchError("state and reference live on different grids")
    r = state.p.grid.nodes
    diff = state.p.values - ref.p_star.values
    d = derivative_values(diff, r)
    return norm_X(state, ref) + float(np.max(r * (1.0 - r) * np.abs(d)))


def _mass_residual(spec, cache, state):
    """Residual of the velocity divergence identity u' + 2u/r = -K_D + K_M p."""
    grid = state.p.grid
    r = grid.nodes
    ns = cache.solve(state.z)
    rv = eval_rates(spec, np.clip(ns.c.values, 0.0, 1.0))
    g = -rv.kd + rv.km * state.p.values
    u = radial_average(g, r)
    du = derivative_values(u, r)
    # interior nodes only: the one-sided endpoint stencils dominate the error
    res = du[1:-1] + 2.0 * u[1:-1] / r[1:-1] - g[1:-1]
    return float(np.max(np.abs(res)))


def simulate(initial, t_end, dt, spec, reference, output_every=0.1,
             dt_max=DT_MAX_DEFAULT):
    """Integrate the nonlinear system and record norm series against reference.

    The trajectory is sampled every output_every time units (plus t=0 and
    t_end); between regrids the particle bundle evolves freely.
    """
    if dt > dt_max * (1 + 1e-12):
        raise ValueError(f"dt={dt} exceeds dt_max={dt_max}")
    grid = initial.p.grid
    cache = NutrientCache(spec, grid)
    h_ref = grid.spacing if grid.is_uniform else float(np.min(np.diff(grid.nodes)))
    n_steps = int(round(t_end / dt))
    every = max(1, int(round(output_every / dt)))

    positions = grid.nodes.copy()
    values = initial.p.values.copy()
    z = initial.z
    t = initial.t

    times, states, nx, nx0, mres = [], [], [], [], []

    def record(t, positions, values, z):
        if np.array_equal(positions, grid.nodes):
            vals = values
        else:
            vals = PchipInterpolator(positions, values)(grid.nodes)
        st = TumorState(t=t, p=RadialField(grid, np.clip(vals, 0.0, 1.0)), z=z)
        times.append(t)
        states.append(st)
        nx.append(norm_X(st, reference))
        nx0.append(norm_X0(st, reference))
        mres.append(_mass_residual(spec, cache, st))

    record(t, positions, values, z)
    for k in range(n_steps):
        positions, values, z = _rk4(spec, cache, positions, values, z, dt)
        t = initial.t + (k + 1) * dt
        if _needs_regrid(positions, h_ref):
            b = regrid(CharacteristicBundle(positions, values, grid))
            positions, values = b.positions.copy(), np.clip(b.values, 0.0, 1.0)
        if (k + 1) % every == 0 or k == n_steps - 1:
            record(t, positions, values, z)
    return Trajectory(
        times=np.array(times),
        states=states,
        norm_x=np.array(nx),
        norm_x0=np.array(nx0),
        mass_residual=np.array(mres),
        reference=reference,
    )


def pure_transport(w_field, q0_field, t_end, dt):
    """Advect q with a fixed velocity w and zero source; returns norm series.

    Used to observe the contraction property of the transport semigroup: the
    sup norm may never increase, and the weighted derivative grows at most
    exponentially.
    """
    grid = q0_field.grid
    h_ref = grid.spacing if grid.is_uniform else float(np.min(np.diff(grid.nodes)))
    positions = grid.nodes.copy()
    values = q0_field.values.copy()
    n_steps = int(round(t_end / dt))
    sup_series = [float(np.max(np.abs(values)))]
    weighted_series = []

    def weighted(positions, values):
        vals = (
            values
            if np.array_equal(positions, grid.nodes)
            else PchipInterpolator(positions, values)(grid.nodes)
        )
        d = derivative_values(vals, grid.nodes)
        r = grid.nodes
        return float(np.max(r * (1.0 - r) * np.abs(d)))

    weighted_series.append(weighted(positions, values))
    wf = w_field.interpolator()

    def vel(r):
        v = wf(r)
        v[0] = 0.0
        v[-1] = 0.0
        return v

    for _ in range(n_steps):
        k1 = vel(positions)
        k2 = vel(positions + 0.5 * dt * k1)
        k3 = vel(positions + 0.5 * dt * k2)
        k4 = vel(positions + dt * k3)
        positions = positions + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        positions[0], positions[-1] = 0.0, 1.0
        if _needs_regrid(positions, h_ref):
            b = regrid(CharacteristicBundle(positions, values, grid))
            positions, values = b.positions.copy(), b.values
        sup_series.append(float(np.max(np.abs(values))))
        weighted_series.append(weighted(positions, values))
    return np.array(sup_series), np.array(weighted_series)


def _interp_path(path_times, path_p, path_z, t):
    """Piecewise-linear lookup of the frozen coefficient path at time t."""
    t = min(max(t, path_times[0]), path_times[-1])
    i = min(int(np.searchsorted(path_times, t, side="right")) - 1, len(path_times) - 2)
    s = (t - path_times[i]) / (path_times[i + 1] - path_times[i])
    return (1 - s) * path_p[i] + s * path_p[i + 1], (1 - s) * path_z[i] + s * path_z[i + 1]


def picard_solve(initial, t_end, dt, spec, reference, mu, max_iters=12,
                 tol=1e-10, output_every=0.1):
    """Iterated frozen-velocity solves converging to the nonlinear solution.

    Iterate n+1 solves the semi-linear system whose advection velocity is
    computed from the previous iterate's path V^n(t) (p and z frozen), while
    the reaction term and dz/dt use the current unknown.  V^0 is the initial
    perturbation decayed at rate mu.  Returns the final trajectory and the
    weighted sup distances d(V^{n+1}, V^n) = sup_t e^{mu t} ||difference||_X.

    Raises SolverError if the distances increase twice in a row.
    """
    grid = initial.p.grid
    cache = NutrientCache(spec, grid)
    h_ref = grid.spacing if grid.is_uniform else float(np.min(np.diff(grid.nodes)))
    n_steps = int(round(t_end / dt))
    path_times = initial.t + dt * np.arange(n_steps + 1)

    # V^0: frozen initial perturbation decayed at rate mu
    dp0 = initial.p.values - reference.p_star.values
    dz0 = initial.z - reference.z_star
    decay = np.exp(-mu * (path_times - initial.t))
    path_p = [reference.p_star.values + d * dp0 for d in decay]
    path_z = [reference.z_star + d * dz0 for d in decay]

    def frozen_velocity(positions, t):
        pv, zv = _interp_path(path_times, path_p, path_z, t)
        ns = cache.solve(zv)
        c = np.clip(ns.c(positions), 0.0, 1.0)
        rv = eval_rates(spec, c)
        pvals = PchipInterpolator(grid.nodes, pv)(positions)
        g = -rv.kd + rv.km * pvals
        u = radial_average(g, positions)
        w = u - positions * u[-1]
        w[0] = 0.0
        w[-1] = 0.0
        return w

    def own_rates(positions, values, z):
        ns = cache.solve(z)
        c = np.clip(ns.c(positions), 0.0, 1.0)
        rv = eval_rates(spec, c)
        g = -rv.kd + rv.km * values
        u = radial_average(g, positions)
        f = rv.kp + (rv.km - rv.kn) * values - rv.km * values * values
        return f, u[-1]

    distances = []
    increases = 0
    traj = None
    for _ in range(max_iters):
        positions = grid.nodes.copy()
        values = initial.p.values.copy()
        z = initial.z
        new_p = [values.copy()]
        new_z = [z]
        for k in range(n_steps):
            t = path_times[k]

            def rates(rr, vv, zz, tt):
                w = frozen_velocity(rr, tt)
                f, u1 = own_rates(rr, vv, zz)
                return w, f, u1

            k1w, k1f, k1u = rates(positions, values, z, t)
            k2w, k2f, k2u = rates(positions + 0.5 * dt * k1w,
                                  values + 0.5 * dt * k1f, z + 0.5 * dt * k1u,
                                  t + 0.5 * dt)
            k3w, k3f, k3u = rates(positions + 0.5 * dt * k2w,
                                  values + 0.5 * dt * k2f, z + 0.5 * dt * k2u,
                                  t + 0.5 * dt)
            k4w, k4f, k4u = rates(positions + dt * k3w,
                                  values + dt * k3f, z + dt * k3u, t + dt)
            positions = positions + dt / 6.0 * (k1w + 2 * k2w + 2 * k3w + k4w)
            values = values + dt / 6.0 * (k1f + 2 * k2f + 2 * k3f + k4f)
            z = z + dt / 6.0 * (k1u + 2 * k2u + 2 * k3u + k4u)
            positions[0], positions[-1] = 0.0, 1.0
            np.clip(values, 0.0, 1.0, out=values)
            if _needs_regrid(positions, h_ref):
                b = regrid(CharacteristicBundle(positions, values, grid))
                positions, values = b.positions.copy(), np.clip(b.values, 0.0, 1.0)
                on_grid = values
            if np.array_equal(positions, grid.nodes):
                on_grid = values
            else:
                on_grid = PchipInterpolator(positions, values)(grid.nodes)
            new_p.append(np.clip(on_grid, 0.0, 1.0))
            new_z.append(z)
        weights = np.exp(mu * (path_times - initial.t))
        d = max(
            float(w * (np.max(np.abs(a - b)) + abs(za - zb)))
            for w, a, b, za, zb in zip(weights, new_p, path_p, new_z, path_z)
        )
        distances.append(d)
        path_p, path_z = new_p, new_z
        if len(distances) >= 2 and distances[-1] > distances[-2]:
            increases += 1
            if increases >= 2:
                raise SolverError(
                    f"Picard iteration diverging: distances {distances}"
                )
        else:
            increases = 0
        if d < tol:
            break

    every = max(1, int(round(output_every / dt)))
    idx = sorted(set(list(range(0, n_steps + 1, every)) + [n_steps]))
    times, states, nx, nx0 = [], [], [], []
    for i in idx:
        st = TumorState(t=path_times[i], p=RadialField(grid, path_p[i]), z=path_z[i])
        times.append(path_times[i])
        states.append(st)
        nx.append(norm_X(st, reference))
        nx0.append(norm_X0(st, reference))
    traj = Trajectory(
        times=np.array(times),
        states=states,
        norm_x=np.array(nx),
        norm_x0=np.array(nx0),
        mass_residual=np.full(len(idx), np.nan),
        reference=reference,
    )
    return traj, np.array(distances)
