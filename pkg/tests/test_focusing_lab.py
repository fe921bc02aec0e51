import numpy as np
import pytest

from ntdfocus import focusing_lab as fl
from ntdfocus.medium import unit_profile
from ntdfocus.signals import TimeGrid
from ntdfocus.wave_forward import SolverGrid, build_ntd, solve_neumann, volume_inner_product

pytestmark = pytest.mark.filterwarnings("ignore")


@pytest.fixture(scope="module")
def identity_errors(ref_profile):
    out = {}
    for N, sg in ((128, SolverGrid.reference(n_x=2048, n_t=8192)),
                  (256, SolverGrid.reference(n_x=4096, n_t=16384))):
        ntd = build_ntd(ref_profile, TimeGrid(N, 2.0), sg)
        out[N] = {n: fl.verify_identity(n, ntd, ref_profile, sg, n_trials=8).relative_error
                  for n in fl.IDENTITIES}
    return out


@pytest.mark.parametrize("name", fl.IDENTITIES)
def test_identity_converges(identity_errors, name):
    coarse, fine = identity_errors[128][name], identity_errors[256][name]
    assert fine < 0.6 * coarse
    assert fine < (0.2 if name == "h1norm" else 2e-2)


def test_identity_errors(ntd64, ref_profile):
    with pytest.raises(fl.ExperimentError):
        fl.verify_identity("nope", ntd64, ref_profile)
    with pytest.raises(fl.ExperimentError):
        fl.verify_identity("blago1", ntd64, None)
    rep = fl.verify_identity("duality", ntd64, None, n_trials=3)
    assert rep.lhs.shape == (3,) and rep.summary()["trials"] == 3


def test_relative_error_floor():
    assert fl.relative_error(1.0, 1.1) == pytest.approx(0.1 / 1.1)
    assert fl.relative_error(1e-20, 0.0, floor=1.0) == pytest.approx(1e-20)
    assert fl.relative_error(0.0, 0.0) == 0.0


def test_trial_signals_independent_of_N():
    a = fl.trial_signals(TimeGrid(64, 2.0), 3, 4)
    b = fl.trial_signals(TimeGrid(128, 2.0), 3, 4)
    np.testing.assert_allclose(a, b[:, ::2], atol=0.05 * np.abs(a).max())
    y = fl.trial_signals(TimeGrid(64, 2.0), 2, 4, in_Y=True)
    assert not y[:, 64:].any()


@pytest.fixture(scope="module")
def flat_setup(coarse_grid):
    prof = unit_profile()
    g = TimeGrid(64, 2.0)
    return prof, g, build_ntd(prof, g, coarse_grid)


def test_volume_matches_oracle(flat_setup, ref_profile, ntd64, coarse_grid):
    for prof, g, _ in (flat_setup, (ref_profile, ntd64.grid, ntd64)):
        b = fl.trial_signals(g, 3, 21)
        _, (s,) = solve_neumann(prof, b, g, coarse_grid, [g.T])
        one = np.ones_like(s.x)
        for k in range(3):
            oracle = volume_inner_product(s.ut[k], one, prof, s.x)
            est = fl.boundary_volume(b[k], g)
            assert est == pytest.approx(oracle, rel=1e-3, abs=1e-3 * np.abs(b[k]).max())
            fd = fl.boundary_volume(b[k], g, exact=False)
            assert abs(est - oracle) < abs(fd - oracle)


def test_volume_normalization_and_degenerate(flat_setup):
    _, g, _ = flat_setup
    b = np.where((g.t > 0) & (g.t < 1), 1.0, 0.0)
    est = fl.slab_volume_from_boundary(b, g)
    assert est.volume == pytest.approx(-(1.0 - g.h))
    np.testing.assert_allclose(est.source, b / est.volume)
    assert fl.slab_volume_from_boundary(b, g, normalize=False).source is None
    with pytest.raises(fl.DegenerateSlabError):
        fl.slab_volume_from_boundary(g.zeros(), g)
    with pytest.raises(fl.DegenerateSlabError):
        fl.recover_coordinate(g.zeros(), flat_setup[2])


def test_coordinate_matches_oracle(flat_setup, coarse_grid):
    prof, g, ntd = flat_setup
    f = np.where(g.t < g.T, np.exp(-((g.t - 1.4) / 0.2) ** 2), 0.0)
    f[0] = f[-1] = 0.0
    _, (s,) = solve_neumann(prof, f, g, coarse_grid, [g.T])
    assert fl.recover_coordinate(f, ntd) == pytest.approx(
        fl.weighted_centroid(prof, s.x, s.u), abs=5e-3)
    assert fl.recover_coordinate(f, ntd, time_derivative=True) == pytest.approx(
        fl.weighted_centroid(prof, s.x, s.ut), abs=5e-3)


def test_weighted_centroid_unit():
    prof = unit_profile()
    x = np.linspace(0, 3, 3001)
    slab = ((x > 0.5) & (x <= 0.75)).astype(float)
    assert fl.weighted_centroid(prof, x, slab) == pytest.approx(0.625, abs=1e-3)


def test_plateau_edge_and_first_arrival():
    x = np.linspace(0, 1, 101)
    assert fl.plateau_edge(x, 1.003 - x, 0.4) == pytest.approx(0.503)
    assert np.isnan(fl.plateau_edge(x, np.ones_like(x), 0.4))
    t = np.linspace(0, 4, 401)
    tr = np.where(t > 3, 1.0, 0.0)
    assert fl.first_arrival(t, tr, 2.0) == pytest.approx(3.01)
    with pytest.raises(fl.ExperimentError):
        fl.first_arrival(t, tr, 2.0, threshold=1.5)
    with pytest.raises(fl.ExperimentError):
        fl.first_arrival(t, np.zeros_like(t), 2.0)


@pytest.fixture(scope="module")
def flat_focus(coarse_grid):
    return fl.focus_slab(unit_profile(), 0.5, 0.75, 1e-3, 1e-4, 128, solver_grid=coarse_grid)


def test_focus_slab_localizes(flat_focus):
    e = flat_focus
    assert e.mass_fraction > 0.8
    assert e.slab_volume == pytest.approx(0.25, abs=0.02)
    s = e.summary()
    assert {"x_r1", "x_r2", "mass_fraction", "converged"} <= set(s)


def test_focus_slab_rejects_bad_radii(ref_profile, ntd64):
    with pytest.raises(fl.ExperimentError):
        fl.focus_slab(ref_profile, 0.7, 0.5, 1e-3, 1e-4, 64, ntd=ntd64)
    with pytest.raises(fl.ExperimentError):
        fl.focus_slab(ref_profile, 0.5, 0.7, 1e-3, 1e-4, 32, ntd=ntd64)


def test_observation_time_unit_medium(flat_focus, coarse_grid):
    rep = fl.observation_time(flat_focus, solver_grid=coarse_grid)
    assert rep.arrival > flat_focus.T
    assert rep.x_hat == pytest.approx(0.625, abs=0.02)
    assert rep.predicted == pytest.approx(2.625, abs=0.02)
    assert set(rep.sensitivity) == {"0.05", "0.2"}


def test_indicator_reconstruction_runs(ref_profile, ntd64, coarse_grid):
    e = fl.reconstruct_indicator(ref_profile, 1.0, 1e-2, 64, ntd=ntd64, solver_grid=coarse_grid)
    assert 0 < e.relative_misfit < 1
    assert abs(e.edge - e.x_r) < 0.2
    assert e.summary()["h_norm_sq"] <= e.summary()["h_norm_bound"]
    with pytest.raises(fl.ExperimentError):
        fl.reconstruct_indicator(ref_profile, 2.5, 1e-2, 64, ntd=ntd64)


def test_schedule_and_slope():
    assert fl.schedule(256, 1e-3, 128, 1) == pytest.approx(5e-4)
    assert fl.schedule(256, 1e-3, 128, 0) == 1e-3
    N = np.array([64, 128, 256])
    assert fl.loglog_slope(N, 3.0 * N**-0.5) == pytest.approx(-0.5)
    assert fl.loglog_slope([64], [0.1]) is None
    assert fl.loglog_slope([64, 64], [0.1, 0.2]) is None
    assert fl.loglog_slope([64, 128], [0.1, float("nan")]) is None


def test_sweep_deterministic_and_ratio(coarse_grid):
    args = dict(N_list=[32, 64], alpha0=1e-3, beta0=1e-4, p_alpha=1, p_beta=1,
                solver_grid=coarse_grid)
    t1 = fl.convergence_sweep(unit_profile(), 0.5, 0.75, **args)
    t2 = fl.convergence_sweep(unit_profile(), 0.5, 0.75, **args)
    assert t1.as_records() == t2.as_records()
    ratios = [r.beta / r.alpha for r in t1.rows]
    assert ratios[0] == pytest.approx(ratios[1])
    assert t1.rows[1].alpha == pytest.approx(t1.rows[0].alpha / 2)
    with pytest.raises(fl.ExperimentError):
        fl.convergence_sweep(unit_profile(), 0.5, 0.75, [64, 32])


def test_sweep_records_failures(coarse_grid):
    tab = fl.convergence_sweep(unit_profile(), 0.5, 0.75, [8, 32], solver_grid=coarse_grid)
    assert tab.rows[0].failure is not None or np.isfinite(tab.rows[0].error)
    assert len(tab.rows) == 2


@pytest.mark.xfail(reason="near-origin mass does not shrink under refinement at fixed "
                          "regularization; see notes", strict=False)
def test_near_origin_mass_shrinks(ref_profile):
    sg = SolverGrid.reference(n_x=4096, n_t=16384)
    tab = fl.convergence_sweep(ref_profile, 0.5, 0.625, [128, 256, 512], solver_grid=sg)
    mass = [r.near_origin_mass for r in tab.rows]
    assert all(b < a for a, b in zip(mass, mass[1:]))
