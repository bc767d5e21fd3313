import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from burgerslab.exceptions import ConfigurationError, NumericalError
from burgerslab.noise import GridSpec, generate_rectangle_noise
from burgerslab.solver import (
    Coefficient,
    CutoffFn,
    InitialData,
    ProblemSpec,
    TimeCoefficient,
    cutoff_drift,
    cutoff_drift_lipschitz_bound,
    cutoff_eval,
    evolve,
    max_wave_speed,
    path_to_csv,
    read_path_dump,
    run_ensemble,
    spec_hash,
    step,
    write_path_dump,
)


def make_grid(n_x=128, n_t=None, length=16.0, t_end=0.25, boundary="periodic"):
    if n_t is None:
        dx = length / n_x
        n_t = int(np.ceil(t_end / (0.25 * dx * dx)))
    return GridSpec(-length / 2, length / 2, n_x, t_end, n_t, boundary)


def case1_spec(**overrides):
    base = dict(regime="case1_bounded_lipschitz", lam=1.0, K=1.0,
                coeff_a=1.0, coeff_bbar=1.0,
                u0=InitialData.bump(1.0, 0.0, 1.0), cutoff_m=8.0)
    base.update(overrides)
    return ProblemSpec(**base)


def case2_spec(**overrides):
    base = dict(regime="case2_superlinear", lam=0.5, lam0=0.25, K=1.0,
                coeff_a=1.0, coeff_bbar=1.0, mu=1.0,
                u0=InitialData.bump(2.0, 0.0, 1.0), cutoff_m=8.0)
    base.update(overrides)
    return ProblemSpec(**base)


class TestCutoff:
    def test_plateau_and_support(self):
        h = CutoffFn(5.0)
        assert cutoff_eval(h, 4.0) == 1.0
        assert cutoff_eval(h, -4.9) == 1.0
        assert cutoff_eval(h, 12.0) == 0.0
        assert cutoff_eval(h, -10.0) == 0.0

    def test_midpoint_value_from_closed_form(self):
        # profile at 1.5: s = 0.5, 1 - s^2 (3 - 2 s) = 1/2
        assert cutoff_eval(CutoffFn(5.0), 7.5) == pytest.approx(0.5)

    def test_invalid_level(self):
        with pytest.raises(ConfigurationError):
            CutoffFn(0.0)

    @settings(max_examples=50, deadline=None)
    @given(m=st.floats(0.1, 100.0), z=st.floats(-500.0, 500.0))
    def test_range_property(self, m, z):
        h = CutoffFn(m)
        val = cutoff_eval(h, z)
        assert 0.0 <= val <= 1.0
        if abs(z) <= m:
            assert val == 1.0
        if abs(z) >= 2 * m:
            assert val == 0.0

    def test_drift_negative_input_vanishes(self):
        assert cutoff_drift(-3.0, 0.5, CutoffFn(5.0)) == 0.0

    def test_drift_unit_value(self):
        for lam in (0.25, 0.5, 1.0):
            assert cutoff_drift(1.0, lam, CutoffFn(1.0)) == 1.0

    def test_drift_lipschitz_brute_force(self):
        # 1e6 random pairs against the closed-form slope bound
        m, lam = 3.0, 0.7
        h = CutoffFn(m)
        rng = np.random.Generator(np.random.Philox(key=21))
        u = rng.uniform(-3 * m, 3 * m, size=10 ** 6)
        v = rng.uniform(-3 * m, 3 * m, size=10 ** 6)
        keep = np.abs(u - v) > 1e-12
        ratio = np.abs(cutoff_drift(u[keep], lam, h) - cutoff_drift(v[keep], lam, h))
        ratio = ratio / np.abs(u[keep] - v[keep])
        bound = cutoff_drift_lipschitz_bound(lam, h)
        assert np.isfinite(ratio).all()
        assert ratio.max() <= bound


class TestCoefficients:
    def test_expression_coefficient(self):
        c = Coefficient("1.0 + 0.5*sin(x) + 0.0*t")
        x = np.linspace(-1, 1, 11)
        assert np.allclose(c.at(0.0, x), 1.0 + 0.5 * np.sin(x))

    def test_table_coefficient(self):
        c = Coefficient((np.array([0.0, 1.0]), np.array([2.0, 4.0])))
        assert np.allclose(c.at(0.0, np.array([0.5])), [3.0])

    def test_bbar_rejects_x_dependence(self):
        with pytest.raises(ConfigurationError):
            TimeCoefficient("1.0 + x")
        with pytest.raises(ConfigurationError):
            TimeCoefficient(lambda t, x: t + x)

    def test_expression_rejects_unknown_names(self):
        with pytest.raises(ConfigurationError):
            Coefficient("__import__('os')")


class TestValidation:
    def test_ellipticity(self):
        grid = make_grid()
        spec = case1_spec(coeff_a=0.05)
        with pytest.raises(ConfigurationError, match="ellipticity"):
            spec.validate(grid)

    def test_bound_on_b(self):
        grid = make_grid()
        with pytest.raises(ConfigurationError, match="uniform bound"):
            case1_spec(coeff_b=3.0).validate(grid)

    def test_case1_lambda_range(self):
        grid = make_grid()
        with pytest.raises(ConfigurationError, match=r"\(0, 1\]"):
            case1_spec(lam=1.5).validate(grid)

    def test_case2_lambda_ranges(self):
        grid = make_grid()
        with pytest.raises(ConfigurationError, match=r"\(0, 1\)"):
            case2_spec(lam=1.0).validate(grid)
        with pytest.raises(ConfigurationError, match=r"\[0, 0.5\)"):
            case2_spec(lam0=0.6).validate(grid)

    def test_sigma_bound_enforced(self):
        grid = make_grid()

        def bad_sigma(u):
            return 2.0 * np.minimum(np.abs(u), 1.0)

        with pytest.raises(ConfigurationError, match="sigma"):
            case1_spec(sigma=bad_sigma).validate(grid)

    def test_mu_bound_enforced(self):
        grid = make_grid()
        with pytest.raises(ConfigurationError, match="mu"):
            case2_spec(mu=2.5).validate(grid)

    def test_negative_initial_data(self):
        grid = make_grid()
        xs = np.linspace(-8, 8, 32)
        spec = case1_spec(u0=InitialData.table(xs, np.sin(xs)))
        with pytest.raises(ConfigurationError, match="nonnegative"):
            spec.validate(grid)


class TestStep:
    def test_constant_state_heat_fixed_point(self):
        grid = make_grid()
        spec = case1_spec(coeff_bbar=0.0)
        state = np.full(grid.n_x, 2.0)
        out = step(state, 0.0, spec, grid, None, grid.dt)
        assert np.abs(out - 2.0).max() < 1e-14

    def test_heat_oracle_spectral(self):
        grid = make_grid(n_x=512, t_end=0.5)
        spec = case1_spec(coeff_bbar=0.0)
        path = evolve(spec, grid, None, store_every=grid.n_t)
        u0 = spec.u0.sample(grid)
        xi = 2 * np.pi * np.fft.rfftfreq(grid.n_x, d=grid.dx)
        exact = np.fft.irfft(np.fft.rfft(u0) * np.exp(-xi ** 2 * grid.t_end),
                             n=grid.n_x)
        rel = np.linalg.norm(path.final_state() - exact) / np.linalg.norm(exact)
        assert rel <= 1e-3

    def test_mass_telescopes_with_flux(self):
        # conservative flux form: signed mass constant regardless of lam, bbar
        grid = make_grid(n_x=128, t_end=0.1)
        for lam in (0.5, 1.0):
            spec = ProblemSpec(regime="case1_bounded_lipschitz", lam=lam, K=20.0,
                               coeff_a=0.05, coeff_bbar=1.0,
                               u0=InitialData.bump(1.0, 0.0, 1.0), cutoff_m=8.0)
            path = evolve(spec, grid, None, store_every=1)
            signed = path.states.sum(axis=1) * grid.dx
            assert np.abs(signed - signed[0]).max() < 1e-8 * grid.t_end

    def test_fft_and_banded_solvers_agree(self):
        grid = make_grid(n_x=128, t_end=0.05)

        def a_const(t, x):
            return np.full_like(x, 1.3)

        a_const.__qualname__ = "a_const_13"
        fast = case1_spec(coeff_a=1.3, K=2.0)
        slow = case1_spec(coeff_a=a_const, K=2.0)
        pf = evolve(fast, grid, None, store_every=grid.n_t)
        ps = evolve(slow, grid, None, store_every=grid.n_t)
        assert np.abs(pf.final_state() - ps.final_state()).max() < 1e-12

    def test_variable_coefficients_run(self):
        grid = make_grid(n_x=128, t_end=0.05)
        spec = case1_spec(coeff_a="1.0 + 0.3*tanh(x)", coeff_b="0.2*cos(x)",
                          coeff_c=0.1, K=2.0)
        path = evolve(spec, grid, None, store_every=grid.n_t)
        assert np.isfinite(path.final_state()).all()

    def test_dirichlet_boundary(self):
        grid = make_grid(n_x=128, t_end=0.1, boundary="dirichlet_zero")
        spec = case1_spec(coeff_bbar=0.0)
        path = evolve(spec, grid, None, store_every=grid.n_t)
        final = path.final_state()
        assert final.min() > -1e-12
        # mass leaks through the walls, never grows
        assert path.mass_series[-1] <= path.mass_series[0]

    def test_rusanov_flux_runs(self):
        grid = make_grid(n_x=128, t_end=0.05)
        spec = case1_spec(flux_scheme="rusanov")
        path = evolve(spec, grid, None, store_every=grid.n_t)
        assert np.isfinite(path.final_state()).all()


class TestEvolve:
    def test_zero_noise_zero_data(self):
        grid = make_grid(n_x=64, t_end=0.05)
        spec = case1_spec(u0=InitialData.constant(0.0))
        path = evolve(spec, grid, None, stop_levels=[0.5, 1.0])
        assert np.abs(path.states).max() == 0.0
        assert all(v is None for v in path.hitting_times.values())

    def test_case1_positivity(self):
        grid = make_grid(n_x=128, t_end=0.25)
        spec = case1_spec()
        noise = generate_rectangle_noise(grid, 3)
        path = evolve(spec, grid, noise, store_every=grid.n_t)
        tol = 3.0 * spec.K * np.sqrt(grid.dt / grid.dx)
        assert path.min_series.min() >= -tol

    def test_hitting_time_definition(self):
        grid = make_grid(n_x=64, t_end=0.05)
        spec = case1_spec(u0=InitialData.bump(2.0, 0.0, 1.0), coeff_bbar=0.0)
        sup0 = spec.u0.sample(grid).max()
        path = evolve(spec, grid, None, stop_levels=[1.5, float(sup0), 5.0])
        # levels at or below the initial sup are hit at step 0
        assert path.hitting_times[1.5] == 0
        assert path.hitting_times[float(sup0)] == 0
        assert path.hitting_times[5.0] is None
        assert path.sup_series[0] == pytest.approx(sup0)

    def test_localization_nesting(self):
        grid = make_grid(n_x=256, t_end=0.25, length=16.0)
        noise = generate_rectangle_noise(grid, 99)
        paths = {}
        for m in (4.0, 8.0, 16.0):
            paths[m] = evolve(case2_spec(cutoff_m=m, u0=InitialData.bump(3.0, 0.0, 1.0)),
                              grid, noise, stop_levels=[4.0], store_every=1)
        hits = [p.hitting_times[4.0] for p in paths.values()]
        cut = min((h for h in hits if h is not None),
                  default=paths[4.0].stored_steps[-1])
        keep = paths[4.0].stored_steps <= cut
        for m in (8.0, 16.0):
            diff = np.abs(paths[m].states[keep] - paths[4.0].states[keep]).max()
            assert diff <= 1e-10

    def test_explosion_flagged_not_raised(self):
        grid = make_grid(n_x=64, t_end=0.25)
        # cutoff disabled and a violent flux: the blow-up is flagged, with
        # partial series retained
        spec = ProblemSpec(regime="case1_bounded_lipschitz", lam=1.0, K=1.0,
                           coeff_a=1.0, coeff_bbar=1.0,
                           u0=InitialData.bump(1.0, 0.0, 0.5), cutoff_m=None)
        noise_big = generate_rectangle_noise(grid, 1)
        big = type(noise_big)(increments=np.asarray(noise_big.increments) * 400.0,
                              seed=1, construction="rectangle_increment", grid=grid)
        path = evolve(spec, grid, big)
        assert path.exploded
        assert path.sup_series.size < grid.n_t + 1
        assert np.isfinite(path.states).all()

    def test_noise_grid_mismatch(self):
        grid = make_grid(n_x=64, t_end=0.05)
        other = make_grid(n_x=32, t_end=0.05)
        noise = generate_rectangle_noise(other, 0)
        with pytest.raises(ConfigurationError):
            evolve(case1_spec(), grid, noise)

    def test_dt_stability_guard(self):
        grid = GridSpec(-8.0, 8.0, 64, 1.0, 8)  # dt = 0.125, dx = 0.25
        spec = case2_spec(cutoff_m=16.0, u0=InitialData.bump(2.0, 0.0, 1.0))
        assert max_wave_speed(spec, grid) * grid.dt / grid.dx > 1.0
        with pytest.raises(NumericalError, match="time step"):
            evolve(spec, grid, None)


class TestEnsemble:
    def test_zero_data_aggregates(self):
        grid = make_grid(n_x=64, t_end=0.05)
        spec = case1_spec(u0=InitialData.constant(0.0))
        summary = run_ensemble(spec, grid, 4, 11, stop_levels=[1.0, 2.0, 3.0])
        assert summary.aggregates["e_sup_sqrt_mass"] == 0.0
        assert summary.aggregates["e_int_mass"] == 0.0
        assert all(rec["p_exceed"] == 0.0 for rec in summary.per_level)

    def test_deterministic_given_master_seed(self):
        grid = make_grid(n_x=64, t_end=0.05)
        spec = case1_spec()
        a = run_ensemble(spec, grid, 5, 77, stop_levels=[1.0])
        b = run_ensemble(spec, grid, 5, 77, stop_levels=[1.0])
        assert json.dumps(a.as_dict(), sort_keys=True) == json.dumps(b.as_dict(), sort_keys=True)
        c = run_ensemble(spec, grid, 5, 78, stop_levels=[1.0])
        assert json.dumps(a.as_dict(), sort_keys=True) != json.dumps(c.as_dict(), sort_keys=True)

    def test_exceedance_monotone_in_level(self):
        grid = make_grid(n_x=64, t_end=0.1)
        spec = case1_spec(u0=InitialData.bump(1.5, 0.0, 1.0))
        summary = run_ensemble(spec, grid, 16, 5, stop_levels=[0.5, 1.0, 1.6, 3.0])
        probs = [rec["p_exceed"] for rec in summary.per_level]
        assert all(probs[i] >= probs[i + 1] for i in range(len(probs) - 1))

    def test_case1_sigma_clamped_at_K(self):
        grid = make_grid(n_x=64, t_end=0.1)
        spec = case1_spec(u0=InitialData.bump(3.0, 0.0, 1.0))
        summary = run_ensemble(spec, grid, 8, 3, stop_levels=[])
        assert summary.aggregates["sigma_max"] <= spec.K + 1e-12

    def test_path_callback_order(self):
        grid = make_grid(n_x=64, t_end=0.05)
        seen = []
        run_ensemble(case1_spec(), grid, 4, 9, path_callback=lambda i, p: seen.append(i))
        assert seen == [0, 1, 2, 3]

    def test_spec_hash_stable(self):
        grid = make_grid(n_x=64, t_end=0.05)
        assert spec_hash(case1_spec(), grid) == spec_hash(case1_spec(), grid)
        assert spec_hash(case1_spec(), grid) != spec_hash(case1_spec(lam=0.5), grid)


class TestExports:
    def test_csv_long_form(self, tmp_path):
        grid = make_grid(n_x=8, n_t=4, t_end=0.001)
        path = evolve(case1_spec(coeff_bbar=0.0), grid, None, store_every=2)
        target = tmp_path / "traj.csv"
        path_to_csv(path, target)
        lines = target.read_text().strip().splitlines()
        assert lines[0] == "t,x,u"
        assert len(lines) == 1 + path.states.shape[0] * grid.n_x

    def test_binary_roundtrip(self, tmp_path):
        grid = make_grid(n_x=8, n_t=4, t_end=0.001)
        path = evolve(case1_spec(coeff_bbar=0.0), grid, None, store_every=1)
        target = tmp_path / "traj.spth"
        write_path_dump(target, path)
        states, meta = read_path_dump(target)
        assert np.array_equal(states, path.states)
        assert meta["n_x"] == 8
        assert meta["dt_stored"] == pytest.approx(grid.dt)
