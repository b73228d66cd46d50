"""Time stepper: CFL control, conservative density update, IMEX nutrient
update, full runs, and the self-similar verification study."""

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.ndimage import binary_dilation

from tumorhs import model, solver
from tumorhs.grid import Grid
from tumorhs.solver import (RunSetup, SolverError, State, cfl_dt, run,
                            step_density, step_nutrient)


def make_state(g, params, n, c=None):
    p = model.pressure_from_density(n, params.gamma)
    c = np.full(g.shape, params.c_B) if c is None else c
    return State(g, 0.0, n, p, c)


def constant_G(value, params):
    def g1(x):
        return np.zeros_like(np.asarray(x, dtype=float))
    return model.ReactionSpec(
        G=lambda p, c: np.full_like(np.asarray(p, dtype=float), value),
        H=g1, K=g1, c_star=1.0, family="stub", params=params)


# ---------------------------------------------------------------------------
# cfl_dt
# ---------------------------------------------------------------------------

def test_cfl_formula_value():
    # h=0.01, gamma=50, max n^gamma = 1, d=1, safety=0.4 -> 4e-7
    params = model.ModelParams(gamma=50.0)
    spec = solver.reactions_off(params)
    g = Grid.symmetric(1, 0.5, 100)      # h = 0.01
    n = np.full(g.shape, 1.0)
    st_ = make_state(g, params, n)
    assert cfl_dt(st_, params, spec, safety=0.4) == pytest.approx(4e-7, rel=1e-12)


def test_cfl_zero_density_reaction_cap_alone():
    params = model.ModelParams(gamma=20.0)
    spec = model.default_reactions(params)
    g = Grid.symmetric(1, 1.0, 64)
    st_ = make_state(g, params, np.zeros(g.shape))
    # G(0, c_B) = 0.6 is the largest rate on this state
    assert cfl_dt(st_, params, spec, safety=0.4) == pytest.approx(0.4 / 0.6, rel=1e-12)


def test_cfl_halves_when_gamma_doubles():
    g = Grid.symmetric(1, 1.0, 64)
    n = np.full(g.shape, 1.0)
    dts = []
    for gamma in (25.0, 50.0):
        params = model.ModelParams(gamma=gamma)
        spec = solver.reactions_off(params)
        dts.append(cfl_dt(make_state(g, params, n), params, spec))
    assert dts[1] == pytest.approx(dts[0] / 2.0, rel=1e-12)


def test_cfl_nan_state_is_fatal():
    params = model.ModelParams(gamma=10.0)
    spec = solver.reactions_off(params)
    g = Grid.symmetric(1, 1.0, 64)
    st_ = make_state(g, params, np.ones(g.shape))
    st_.p[3] = np.nan
    with pytest.raises(SolverError, match="non-finite"):
        cfl_dt(st_, params, spec)


# ---------------------------------------------------------------------------
# density step
# ---------------------------------------------------------------------------

def test_zero_density_is_a_fixed_point():
    params = model.ModelParams(gamma=10.0)
    spec = model.default_reactions(params)
    g = Grid.symmetric(1, 1.0, 64)
    st_ = make_state(g, params, np.zeros(g.shape))
    n_new, p_new, clipped = step_density(st_, 1e-3, params, spec)
    assert np.all(n_new == 0.0) and np.all(p_new == 0.0) and clipped == 0.0


def test_interior_plateau_grows_exponentially():
    # uniform interior with constant G: the center follows n0*exp(g t) up to
    # O(dt) until the edge rarefaction arrives (finite propagation speed)
    rate = 0.3
    params = model.ModelParams(gamma=10.0)
    spec = constant_G(rate, params)
    g = Grid.symmetric(1, 2.0, 128)
    n0, _ = solver.initial_plateau(g, params, theta=0.5, radius=0.8, edge=0.2,
                                   height="density")
    setup = RunSetup(grid=g, params=params, spec=spec, n0=n0,
                     c0=solver.nutrient_uniform(g, params), T=0.2,
                     snapshot_dt=0.01)
    traj = run(setup)
    center = g.n // 2
    exact = 0.5 * params.n_H * math.exp(rate * 0.2)
    max_dt = float(np.max(traj.dts))
    assert traj.n[-1][center] == pytest.approx(exact, rel=5.0 * max(max_dt, 1e-3))


def test_clipping_is_accounted():
    params = model.ModelParams(gamma=4.0)
    spec = constant_G(10.0, params)
    g = Grid.symmetric(1, 1.0, 64)
    n = np.full(g.shape, 0.999 * params.n_H)
    st_ = make_state(g, params, n)
    dt = 0.01
    n_new, _, clipped = step_density(st_, dt, params, spec)
    assert np.all(n_new <= params.n_H)
    over = n * (1.0 + 10.0 * dt) - params.n_H   # uniform state: no flux
    expected = float(np.sum(over)) * g.cell_volume
    assert clipped == pytest.approx(expected, rel=1e-10)


def test_negative_update_aborts_with_cell():
    params = model.ModelParams(gamma=2.0)
    spec = solver.reactions_off(params)
    g = Grid.symmetric(1, 1.0, 64)
    n = np.full(g.shape, 1e-6)
    n[g.n // 2] = 0.8
    st_ = make_state(g, params, n)
    with pytest.raises(SolverError, match="cell"):
        step_density(st_, 1.0, params, spec)   # wildly violates the CFL bound


# ---------------------------------------------------------------------------
# nutrient step
# ---------------------------------------------------------------------------

def test_nutrient_fixed_point_exact():
    params = model.ModelParams(gamma=10.0)
    spec = model.default_reactions(params)
    g = Grid.symmetric(1, 1.0, 64)
    st_ = make_state(g, params, np.zeros(g.shape))
    c_new = step_nutrient(st_, 0.05, params, spec)
    assert np.array_equal(c_new, np.full(g.shape, params.c_B))


def test_nutrient_heat_equation_exact_discrete_and_continuum():
    # n = 0 and K = 0: pure backward-Euler heat equation; sine modes are exact
    # eigenvectors of the ghost-cell Laplacian
    params = model.ModelParams(gamma=10.0)
    spec = model.ReactionSpec(
        G=lambda p, c: np.zeros_like(np.asarray(p, dtype=float)),
        H=lambda c: np.asarray(c, dtype=float),
        K=lambda p: np.zeros_like(np.asarray(p, dtype=float)),
        c_star=1.0, params=params)
    L, N = 1.0, 128
    g = Grid.symmetric(1, L, N)
    x = g.coords[0]
    A, k = 0.3, 1
    mode = np.sin(k * math.pi * (x + L) / (2 * L))
    c = params.c_B - A * mode
    dt, steps = 2e-4, 100
    state = State(g, 0.0, np.zeros(g.shape), np.zeros(g.shape), c)
    nut = solver._NutrientSolver(g)
    for _ in range(steps):
        c = step_nutrient(state, dt, params, spec, _solver=nut)
        state = State(g, state.t + dt, state.n, state.p, c)
    lam_h = (4.0 / g.h ** 2) * math.sin(k * math.pi * g.h / (4 * L)) ** 2
    exact_discrete = params.c_B - A * mode / (1.0 + dt * lam_h) ** steps
    assert np.max(np.abs(c - exact_discrete)) <= 1e-12
    lam = (k * math.pi / (2 * L)) ** 2
    exact_continuum = params.c_B - A * mode * math.exp(-lam * dt * steps)
    assert np.max(np.abs(c - exact_continuum)) <= 10.0 * (dt + g.h ** 2)


def test_nutrient_2d_heat_smoke():
    params = model.ModelParams(gamma=10.0)
    spec = model.default_reactions(params)
    g = Grid.symmetric(2, 1.0, 24)
    x, y = g.coords
    c0 = params.c_B * (1.0 - 0.4 * np.exp(-8.0 * (x ** 2 + y ** 2)))
    state = State(g, 0.0, np.zeros(g.shape), np.zeros(g.shape), c0)
    c1 = step_nutrient(state, 1e-3, params, spec)
    assert c1.shape == g.shape
    assert float(np.min(c1)) >= float(np.min(c0)) - 1e-12   # relaxes upward
    assert float(np.max(c1)) <= params.c_B + 1e-12


@given(st.integers(min_value=0, max_value=10 ** 6),
       st.floats(min_value=1e-4, max_value=0.3))
def test_nutrient_maximum_principle(seed, dt):
    params = model.ModelParams(gamma=10.0)
    spec = model.default_reactions(params)
    g = Grid.symmetric(1, 1.0, 32)
    rng = np.random.default_rng(seed)
    n = rng.uniform(0.0, 1.0, g.shape)
    c = rng.uniform(0.2, 1.0, g.shape) * params.c_B
    state = make_state(g, params, n, c=c)
    c_new = step_nutrient(state, dt, params, spec)
    assert float(np.max(c_new)) <= params.c_B + 1e-12
    assert float(np.min(c_new)) >= -1e-12
    # without consumption the minimum cannot drop
    no_H = model.ReactionSpec(G=spec.G, H=lambda c: np.zeros_like(np.asarray(c, dtype=float)),
                              K=spec.K, c_star=spec.c_star, params=params)
    c_relax = step_nutrient(state, dt, params, no_H)
    assert float(np.min(c_relax)) >= float(np.min(c)) - 1e-12


# ---------------------------------------------------------------------------
# full runs
# ---------------------------------------------------------------------------

def small_setup(gamma=12.0, T=0.05, snapshot_dt=0.005):
    params = model.ModelParams(gamma=gamma)
    spec = model.default_reactions(params)
    g = Grid.symmetric(1, 2.0, 96)
    n0, _ = solver.initial_plateau(g, params, theta=0.5, radius=0.6, edge=0.25)
    return RunSetup(grid=g, params=params, spec=spec, n0=n0,
                    c0=solver.nutrient_uniform(g, params), T=T,
                    snapshot_dt=snapshot_dt)


def test_zero_horizon_gives_initial_snapshot_only():
    setup = small_setup(T=0.0)
    traj = run(setup)
    assert len(traj) == 1 and traj.times[0] == 0.0
    assert np.array_equal(traj.n[0], setup.n0)


def test_mass_conserved_without_reactions():
    params = model.ModelParams(gamma=8.0, p_H=2.0)
    spec = solver.reactions_off(params)
    g = Grid.symmetric(1, 2.0, 128)
    n0, _ = solver.initial_plateau(g, params, theta=0.4, radius=0.6, edge=0.25)
    setup = RunSetup(grid=g, params=params, spec=spec, n0=n0,
                     c0=solver.nutrient_uniform(g, params), T=0.2, snapshot_dt=0.02)
    traj = run(setup)
    masses = np.sum(traj.n, axis=tuple(range(1, traj.n.ndim))) * g.cell_volume
    assert np.max(np.abs(masses - masses[0])) <= 1e-8 * masses[0]
    assert traj.clipped_mass <= 1e-8 * masses[0]


def test_snapshot_times_are_exact_multiples():
    setup = small_setup()
    traj = run(setup)
    assert np.array_equal(traj.times, np.arange(11) * 0.005)
    assert len(traj.dts) == traj.meta["steps"]


def test_run_is_bitwise_deterministic():
    a = run(small_setup())
    b = run(small_setup())
    assert np.array_equal(a.n, b.n)
    assert np.array_equal(a.p, b.p)
    assert np.array_equal(a.c, b.c)
    assert np.array_equal(a.dts, b.dts)


def test_pressure_density_consistency_along_run():
    traj = run(small_setup())
    for k in (0, len(traj) // 2, len(traj) - 1):
        p = model.pressure_from_density(traj.n[k], traj.params.gamma)
        assert np.allclose(traj.p[k], p, rtol=1e-12, atol=1e-300)


def test_state_bounds_enforced_along_run():
    traj = run(small_setup())
    params = traj.params
    assert float(np.min(traj.n)) >= 0.0
    assert float(np.max(traj.n)) <= params.n_H + 1e-8
    assert float(np.min(traj.c)) >= -1e-8
    assert float(np.max(traj.c)) <= params.c_B + 1e-8


def test_initial_data_validation():
    setup = small_setup()
    bad = RunSetup(grid=setup.grid, params=setup.params, spec=setup.spec,
                   n0=setup.n0 + 2.0, c0=setup.c0, T=0.01, snapshot_dt=0.01)
    with pytest.raises(ValueError, match="n0"):
        run(bad)
    bad_c = RunSetup(grid=setup.grid, params=setup.params, spec=setup.spec,
                     n0=setup.n0, c0=setup.c0 + 1.0, T=0.01, snapshot_dt=0.01)
    with pytest.raises(ValueError, match="c0"):
        run(bad_c)


def test_initial_report_norms_present():
    traj = run(small_setup())
    assert math.isfinite(traj.meta["grad_p0_l2"])
    assert math.isfinite(traj.meta["lap_p0_l2"])


def test_partial_flush_on_failure(tmp_path):
    params = model.ModelParams(gamma=6.0)
    # negative consumption pumps the nutrient above c_B: the per-step state
    # check trips and the partial trajectory is flushed before re-raising
    def zero(x):
        return np.zeros_like(np.asarray(x, dtype=float))
    spec = model.ReactionSpec(G=lambda p, c: zero(p),
                              H=lambda c: np.full_like(np.asarray(c, dtype=float), -5.0),
                              K=zero, c_star=1.0, params=params)
    g = Grid.symmetric(1, 1.0, 64)
    n0 = np.full(g.shape, 0.5)
    setup = RunSetup(grid=g, params=params, spec=spec, n0=n0,
                     c0=solver.nutrient_uniform(g, params), T=0.1,
                     snapshot_dt=0.01, out_dir=tmp_path / "aborted")
    with pytest.raises(SolverError):
        run(setup)
    assert (tmp_path / "aborted" / "partial.json").exists()


def test_finite_propagation_one_cell_layer_per_step():
    setup = small_setup(gamma=10.0)
    prev = None
    for k, state in enumerate(solver.iterate_states(setup, max_steps=200)):
        mask = state.n > 1e-12
        if prev is not None:
            allowed = binary_dilation(prev)
            assert np.all(allowed[mask]), f"support jumped more than one cell at step {k}"
        prev = mask


# ---------------------------------------------------------------------------
# initial data builders
# ---------------------------------------------------------------------------

def test_plateau_height_modes():
    params = model.ModelParams(gamma=40.0)
    g = Grid.symmetric(1, 2.0, 128)
    n_p, p_p = solver.initial_plateau(g, params, 0.5, 0.7, 0.3, height="pressure")
    assert float(np.max(p_p)) == pytest.approx(0.5 * params.p_H, rel=1e-12)
    n_d, p_d = solver.initial_plateau(g, params, 0.5, 0.7, 0.3, height="density")
    assert float(np.max(n_d)) == pytest.approx(0.5 * params.n_H, rel=1e-12)
    assert float(np.max(p_d)) == pytest.approx((0.5 * params.n_H) ** params.gamma,
                                               rel=1e-10)
    for n0 in (n_p, n_d):
        assert np.all(n0 >= 0.0) and np.all(n0 <= params.n_H + 1e-15)


def test_prerelaxed_profile_is_gamma_uniform():
    g = Grid.symmetric(1, 2.0, 96)
    spec10 = model.default_reactions(model.ModelParams(gamma=10.0))
    spec40 = model.default_reactions(model.ModelParams(gamma=40.0))
    _, p_a = solver.initial_prerelaxed(g, model.ModelParams(gamma=10.0), spec10,
                                       theta=0.5, radius=0.7, edge=0.3, t_relax=0.01)
    _, p_b = solver.initial_prerelaxed(g, model.ModelParams(gamma=40.0), spec40,
                                       theta=0.5, radius=0.7, edge=0.3, t_relax=0.01)
    assert np.array_equal(p_a, p_b)
    # warmup smooths: the relaxed profile has smaller extreme gradients
    _, p_raw = solver.initial_plateau(g, model.ModelParams(gamma=10.0), 0.5, 0.7, 0.3)
    assert float(np.max(np.abs(np.diff(p_a)))) < float(np.max(np.abs(np.diff(p_raw))))


def test_initial_from_csv_roundtrip(tmp_path):
    from tumorhs.grid import Field
    params = model.ModelParams(gamma=10.0)
    g = Grid.symmetric(1, 1.0, 32)
    n0 = np.clip(0.5 + 0.3 * np.sin(g.coords[0] * 3.0), 0.0, params.n_H)
    Field(g, n0).to_csv(tmp_path / "n0.csv")
    n_read, p_read = solver.initial_from_csv(g, params, tmp_path / "n0.csv")
    assert np.allclose(n_read, n0, rtol=0, atol=1e-15)


def test_nutrient_deficit_bounds():
    params = model.ModelParams(gamma=10.0)
    g = Grid.symmetric(1, 1.0, 64)
    c0 = solver.nutrient_deficit(g, params, depth=0.7, radius=0.5)
    # cell centers sit at +-h/2, so the sampled minimum is marginally above
    # the analytic trough c_B*(1 - depth)
    assert 0.3 * params.c_B <= float(np.min(c0)) <= 0.3 * params.c_B + 1e-3
    assert float(np.max(c0)) == pytest.approx(params.c_B, rel=1e-12)


def test_two_dimensional_run_against_radial_oracle():
    gamma = 4.0
    params = model.ModelParams(gamma=gamma, p_H=4.0)
    spec = solver.reactions_off(params)
    from tumorhs.analytic import BarenblattParams, barenblatt_density
    prm = BarenblattParams(m=gamma + 1.0, d=2, mass=1.0,
                           kappa=gamma / (gamma + 1.0), t0=0.2)
    errs = {}
    for N in (48, 96):
        g = Grid.symmetric(2, 1.5, N)
        setup = RunSetup(grid=g, params=params, spec=spec,
                         n0=barenblatt_density(g.radius, 0.0, prm),
                         c0=solver.nutrient_uniform(g, params),
                         T=0.3, snapshot_dt=0.1)
        traj = run(setup)
        exact = barenblatt_density(g.radius, 0.3, prm)
        errs[N] = float(np.sum(np.abs(traj.n[-1] - exact))) * g.cell_volume
        masses = np.sum(traj.n, axis=(1, 2)) * g.cell_volume
        assert np.max(np.abs(masses - masses[0])) <= 1e-12 * masses[0]
        # the scheme preserves the exact discrete symmetries of radial data
        assert np.array_equal(traj.n[-1], traj.n[-1].T)
        assert np.array_equal(traj.n[-1], traj.n[-1][::-1, :])
    assert errs[96] < 0.7 * errs[48]


# ---------------------------------------------------------------------------
# verification study (uses the session cache)
# ---------------------------------------------------------------------------

def test_barenblatt_convergence_every_gamma(barenblatt_study):
    for gamma, (rows, orders) in barenblatt_study.items():
        errs = [r[2] for r in rows]
        assert all(errs[i + 1] < errs[i] for i in range(len(errs) - 1)), \
            f"gamma={gamma}: errors not decreasing: {errs}"
        endpoint = math.log(errs[0] / errs[-1]) / math.log(rows[-1][0] / rows[0][0])
        assert endpoint >= 0.8, f"gamma={gamma}: measured order {endpoint:.2f}"
