"""End-to-end focusing experiments and identity checks.

The control side of every experiment sees only the NtD operator.  The
forward solver is used afterwards, as an oracle, to replay the computed
sources and measure what they actually do inside the medium.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import boundary_ops as bo
from .control_solve import RegularizationConfig, SolveReport, solve_a, solve_h
from .medium import MediumProfile, point_at_travel_time, slab_indicator, travel_time
from .ntd import NtdOperator
from .signals import TimeGrid, random_band_limited
from .wave_forward import (
    FieldSnapshot,
    SolverGrid,
    build_ntd,
    field_energy,
    h1_norm_sq,
    propagate_state,
    solve_neumann,
    volume_inner_product,
)

log = logging.getLogger(__name__)

IDENTITIES = ("blago1", "blago2", "energy", "h1norm", "duality")


class ExperimentError(ValueError):
    pass


class DegenerateSlabError(ExperimentError):
    pass


def _setup(profile, N, T, solver_grid, ntd):
    tgrid = TimeGrid(N, T)
    sgrid = solver_grid or SolverGrid.reference(T=T, c1=profile.c1)
    if ntd is None:
        ntd = build_ntd(profile, tgrid, sgrid)
    elif ntd.grid != tgrid:
        raise ExperimentError("NtD operator built for a different time grid")
    return tgrid, sgrid, ntd


def _wnorm(v, profile, x) -> float:
    return float(np.sqrt(volume_inner_product(v, v, profile, x)))


# -- indicator reconstruction -------------------------------------------------

@dataclass
class IndicatorExperiment:
    r: float
    alpha: float
    N: int
    h_report: SolveReport
    snapshot: FieldSnapshot
    x_r: float
    misfit: float
    relative_misfit: float
    edge: float

    def summary(self) -> dict:
        return {
            "r": self.r, "alpha": self.alpha, "N": self.N, "x_r": self.x_r,
            "misfit": self.misfit, "relative_misfit": self.relative_misfit,
            "edge": self.edge, "edge_offset": self.edge - self.x_r,
            "h_converged": self.h_report.converged,
            "h_norm_sq": self.h_report.info["norm_sq"],
            "h_norm_bound": self.h_report.info["norm_bound"],
        }


def plateau_edge(x, u, x_ref: float, level: float = 0.5) -> float:
    """The ``level`` crossing of ``u`` closest to ``x_ref`` (linear interpolation)."""
    d = np.asarray(u) - level
    idx = np.nonzero(np.sign(d[:-1]) * np.sign(d[1:]) < 0)[0]
    if idx.size == 0:
        return float("nan")
    xs = x[idx] - d[idx] * (x[idx + 1] - x[idx]) / (d[idx + 1] - d[idx])
    return float(xs[np.argmin(np.abs(xs - x_ref))])


def reconstruct_indicator(
    profile: MediumProfile,
    r: float,
    alpha: float,
    N: int,
    T: float = 2.0,
    solver_grid: SolverGrid | None = None,
    ntd: NtdOperator | None = None,
    cfg: RegularizationConfig | None = None,
) -> IndicatorExperiment:
    """Solve for ``h_alpha`` at radius ``r`` and replay ``u^{P h_alpha}(T)``."""
    if not 0 < r <= T:
        raise ExperimentError("require 0 < r <= T")
    tgrid, sgrid, ntd = _setup(profile, N, T, solver_grid, ntd)
    cfg = cfg or RegularizationConfig(alpha=alpha)
    rep = solve_h(ntd, r, alpha, cfg)
    Ph = bo.project_P(rep.solution, tgrid, r)
    _, (snap,) = solve_neumann(profile, Ph, tgrid, sgrid, [T])
    target = slab_indicator(profile, 0.0, r, snap.x)
    misfit = _wnorm(snap.u - target, profile, snap.x)
    x_r = point_at_travel_time(profile, r)
    return IndicatorExperiment(
        r=r, alpha=alpha, N=N, h_report=rep, snapshot=snap, x_r=x_r,
        misfit=misfit, relative_misfit=misfit / _wnorm(target, profile, snap.x),
        edge=plateau_edge(snap.x, snap.u, x_r),
    )


# -- slab focusing --------------------------------------------------------------

@dataclass
class FocusExperiment:
    r1: float
    r2: float
    alpha: float
    beta: float
    N: int
    T: float
    h_reports: list[SolveReport]
    a_reports: list[SolveReport]
    b: np.ndarray
    snapshot: FieldSnapshot
    trace: np.ndarray
    error: float
    relative_error: float
    h1_proxy: float
    value_norm: float
    derivative_norm: float
    mass_fraction: float
    near_origin_mass: float
    slab_volume: float
    profile: MediumProfile = field(repr=False)

    @property
    def converged(self) -> bool:
        return all(r.converged for r in self.h_reports + self.a_reports)

    @property
    def tgrid(self) -> TimeGrid:
        return TimeGrid(self.N, self.T)

    def summary(self) -> dict:
        return {
            "r1": self.r1, "r2": self.r2, "alpha": self.alpha, "beta": self.beta,
            "N": self.N, "T": self.T,
            "x_r1": point_at_travel_time(self.profile, self.r1),
            "x_r2": point_at_travel_time(self.profile, self.r2),
            "error": self.error, "relative_error": self.relative_error,
            "h1_proxy": self.h1_proxy, "value_norm": self.value_norm,
            "derivative_norm": self.derivative_norm,
            "mass_fraction": self.mass_fraction,
            "near_origin_mass": self.near_origin_mass,
            "slab_volume": self.slab_volume,
            "converged": self.converged,
            "h_relative_residuals": [r.final_relative_residual for r in self.h_reports],
            "a_relative_residuals": [r.final_relative_residual for r in self.a_reports],
        }


def focus_slab(
    profile: MediumProfile,
    r1: float,
    r2: float,
    alpha: float,
    beta: float,
    N: int,
    T: float = 2.0,
    solver_grid: SolverGrid | None = None,
    ntd: NtdOperator | None = None,
    cfg: RegularizationConfig | None = None,
    margin: float = 0.02,
) -> FocusExperiment:
    """Focus on the slab ``M(r2) \\ M(r1)`` with ``b = a(r2) - a(r1)``.

    The error is ``||u_t^b(T) - 1_slab||`` in ``L^2(c^-2 dx)``; the mass
    fraction is the share of ``||u_t^b(T)||^2`` inside the slab widened by
    ``margin`` on both sides.
    """
    if not 0 < r1 < r2 <= T:
        raise ExperimentError("require 0 < r1 < r2 <= T")
    tgrid, sgrid, ntd = _setup(profile, N, T, solver_grid, ntd)
    cfg = cfg or RegularizationConfig(alpha=alpha, beta=beta)
    h_reps, a_reps, sources = [], [], []
    for r in (r1, r2):
        hr = solve_h(ntd, r, alpha, cfg)
        ar = solve_a(ntd, hr.solution, r, beta, cfg)
        h_reps.append(hr)
        a_reps.append(ar)
        sources.append(ar.solution)
        if not (hr.converged and ar.converged):
            log.warning("solver budget exhausted at r=%g (h: %.2e, a: %.2e)", r,
                        hr.final_relative_residual, ar.final_relative_residual)
    b = sources[1] - sources[0]
    trace, (snap,) = solve_neumann(profile, b, tgrid, sgrid, [T])
    x = snap.x
    target = slab_indicator(profile, r1, r2, x)
    err = _wnorm(snap.ut - target, profile, x)
    x1, x2 = point_at_travel_time(profile, [r1, r2])
    window = (x >= x1 - margin) & (x <= x2 + margin)
    total = volume_inner_product(snap.ut, snap.ut, profile, x)
    return FocusExperiment(
        r1=r1, r2=r2, alpha=alpha, beta=beta, N=N, T=T,
        h_reports=h_reps, a_reports=a_reps, b=b, snapshot=snap, trace=trace,
        error=err, relative_error=err / _wnorm(target, profile, x),
        h1_proxy=float(np.sqrt(h1_norm_sq(snap, profile))),
        value_norm=_wnorm(snap.u, profile, x),
        derivative_norm=float(np.sqrt(total)),
        mass_fraction=float(volume_inner_product(snap.ut * window, snap.ut, profile, x) / total)
        if total > 0 else float("nan"),
        near_origin_mass=_wnorm(snap.ut * (x <= profile.l0), profile, x),
        slab_volume=float(volume_inner_product(target, np.ones_like(x), profile, x)),
        profile=profile,
    )


# -- boundary-only geometry -------------------------------------------------------

@dataclass(frozen=True)
class VolumeEstimate:
    volume: float
    source: np.ndarray | None


def boundary_volume(b, grid: TimeGrid, exact: bool = True) -> float:
    """``<u_t^b(T), 1> = -<d_t b, Phi_T>_V`` from boundary data alone.

    With ``exact`` the derivative of the piecewise-affine ``b`` is paired
    with ``Phi_T`` cell by cell, which by parts equals ``-int_0^T b``.  The
    forward-difference pairing (``exact=False``) misses the first cell and
    is off by ``T b(h)``.
    """
    b = grid.check(b)
    if exact:
        mid = grid.t[:-1] + grid.h / 2
        return float(-np.sum(np.diff(b, axis=-1) * np.clip(grid.T - mid, 0.0, None), axis=-1))
    return float(-bo.inner_V(bo.d_dt_discrete(b, grid), bo.phi_T(grid), grid))


def slab_volume_from_boundary(b, grid: TimeGrid, floor: float = 1e-10,
                              normalize: bool = True, exact: bool = True) -> VolumeEstimate:
    """Volume of the focused slab and the normalized source ``b / volume``.

    The sign follows ``<u^h(T), 1> = -<h, Phi_T>_V`` with ``h = d_t b``.
    """
    vol = boundary_volume(b, grid, exact)
    if not normalize:
        return VolumeEstimate(vol, None)
    if abs(vol) <= floor:
        raise DegenerateSlabError(f"volume estimate {vol:.3g} below floor {floor:g}")
    return VolumeEstimate(vol, np.asarray(b, dtype=float) / vol)


def recover_coordinate(f, ntd: NtdOperator, floor: float = 1e-10,
                       time_derivative: bool = False) -> float:
    """Centroid of the wave ``u^f(T)``: ``<u^f(T), x> / <u^f(T), 1>``.

    Numerator ``<R Lambda R Phi_T, f>_V``, denominator ``-<f, Phi_T>_V``.
    With ``time_derivative`` the wave is ``u_t^f(T) = u^{d_t f}(T)`` and
    both pairings are moved onto ``Phi_T`` by parts: numerator
    ``int_0^T Lambda f``, denominator ``-int_0^T f`` (no differencing of
    ``f`` needed).
    """
    grid = ntd.grid
    f = grid.check(f)
    if time_derivative:
        keep = np.arange(grid.n_nodes) <= grid.N
        w = grid.weights.copy()
        w[grid.N] = grid.h / 2
        num = float(np.sum(np.where(keep, w * ntd.apply(f), 0.0)))
        den = float(-np.sum(np.where(keep, w * f, 0.0)))
    else:
        phi = bo.phi_T(grid)
        num = float(bo.inner_V(ntd.apply_adjoint(bo.phi_T_discrete(grid)), f, grid))
        den = float(-bo.inner_V(f, phi, grid))
    if abs(den) <= floor:
        raise DegenerateSlabError(f"denominator {den:.3g} below floor {floor:g}")
    return num / den


def weighted_centroid(profile: MediumProfile, x, values) -> float:
    w = np.asarray(values, dtype=float)
    return float(volume_inner_product(w, x, profile, x)
                 / volume_inner_product(w, np.ones_like(x), profile, x))


# -- observation time ----------------------------------------------------------

@dataclass
class ObservationReport:
    threshold: float
    arrival: float
    predicted: float
    x_hat: float
    tolerance: float
    sensitivity: dict

    @property
    def deviation(self) -> float:
        return abs(self.arrival - self.predicted)

    @property
    def within_tolerance(self) -> bool:
        return self.deviation <= self.tolerance

    def summary(self) -> dict:
        return {
            "threshold": self.threshold, "arrival": self.arrival,
            "predicted": self.predicted, "x_hat": self.x_hat,
            "deviation": self.deviation, "tolerance": self.tolerance,
            "within_tolerance": self.within_tolerance,
            "sensitivity": self.sensitivity,
        }


def first_arrival(t, trace, start: float, threshold: float = 0.1) -> float:
    """Earliest ``t > start`` with ``|trace| > threshold * max |trace|`` on the window."""
    if not 0 < threshold < 1:
        raise ExperimentError("threshold must lie in (0, 1)")
    t = np.asarray(t)
    mag = np.abs(np.asarray(trace))
    win = t > start
    if win.sum() < 2:
        raise ExperimentError("trace window too short")
    peak = mag[win].max()
    if peak == 0:
        raise ExperimentError("no signal in the observation window")
    hit = np.nonzero(win & (mag > threshold * peak))[0][0]
    return float(t[hit])


def focused_trace(exp: FocusExperiment, solver_grid: SolverGrid | None = None,
                  window: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Boundary trace after ``T`` of the wave launched from ``(0, u_t^b(T))``.

    This is the finite-slab stand-in for the point-source wave: the focused
    velocity field, released with zero displacement and zero Neumann data.
    """
    sgrid = solver_grid or SolverGrid.reference(T=exp.T, c1=exp.profile.c1)
    window = exp.T if window is None else window
    snap = exp.snapshot
    tau, tr = propagate_state(exp.profile, np.zeros_like(snap.ut), snap.ut, sgrid, window)
    return exp.T + tau, tr


def observation_time(
    exp: FocusExperiment,
    threshold: float = 0.1,
    solver_grid: SolverGrid | None = None,
    sensitivity: tuple[float, ...] = (0.05, 0.2),
) -> ObservationReport:
    """First arrival of the focused wave at the boundary versus ``T + d(0, x_hat)``."""
    t, tr = focused_trace(exp, solver_grid)
    x1, x2 = point_at_travel_time(exp.profile, [exp.r1, exp.r2])
    x = exp.snapshot.x
    slab = (x > x1) & (x <= x2)
    x_hat = weighted_centroid(exp.profile, x, slab.astype(float))
    predicted = exp.T + travel_time(exp.profile, 0.0, x_hat)
    h = exp.T / exp.N
    return ObservationReport(
        threshold=threshold,
        arrival=first_arrival(t, tr, exp.T, threshold),
        predicted=predicted,
        x_hat=x_hat,
        tolerance=(exp.r2 - exp.r1) / 2 + 2 * h,
        sensitivity={str(s): first_arrival(t, tr, exp.T, s) for s in sensitivity},
    )


# -- identity oracles -----------------------------------------------------------

@dataclass
class IdentityReport:
    name: str
    lhs: np.ndarray
    rhs: np.ndarray
    floors: np.ndarray
    N: int
    n_x: int
    n_t: int

    @property
    def relative_errors(self) -> np.ndarray:
        scale = np.maximum(np.maximum(np.abs(self.lhs), np.abs(self.rhs)), self.floors)
        with np.errstate(invalid="ignore", divide="ignore"):
            err = np.abs(self.lhs - self.rhs) / scale
        return np.where(scale > 0, err, 0.0)

    @property
    def relative_error(self) -> float:
        return float(np.max(self.relative_errors))

    def summary(self) -> dict:
        return {
            "name": self.name, "N": self.N, "n_x": self.n_x, "n_t": self.n_t,
            "trials": int(self.lhs.size), "max_relative_error": self.relative_error,
            "mean_relative_error": float(np.mean(self.relative_errors)),
        }


def relative_error(lhs: float, rhs: float, floor: float = 0.0) -> float:
    scale = max(abs(lhs), abs(rhs), floor)
    return abs(lhs - rhs) / scale if scale > 0 else 0.0


def trial_signals(grid: TimeGrid, n: int, seed: int, in_Y: bool = False) -> np.ndarray:
    """``n`` random band-limited signals; the draw does not depend on ``grid.N``."""
    rng = np.random.default_rng(seed)
    return np.stack([random_band_limited(grid, rng, support_T=in_Y) for _ in range(n)])


def verify_identity(
    name: str,
    ntd: NtdOperator,
    profile: MediumProfile | None,
    solver_grid: SolverGrid | None = None,
    n_trials: int = 20,
    seed: int = 0,
    floor_fraction: float = 0.1,
) -> IdentityReport:
    """Compare a volume-side quantity (forward solves) with its boundary form.

    Relative error per trial is ``|lhs - rhs| / max(|lhs|, |rhs|, floor)``,
    with ``floor = floor_fraction`` times the natural Cauchy-Schwarz scale of
    the pairing, so that pairs with a near-zero inner product are not judged
    by round-off.
    """
    if name not in IDENTITIES:
        raise ExperimentError(f"unknown identity {name!r}; choose from {IDENTITIES}")
    grid = ntd.grid
    T = grid.T
    if name == "duality":
        f = trial_signals(grid, n_trials, seed)
        a = trial_signals(grid, n_trials, seed + 1, in_Y=True)
        lhs = bo.inner_V(f, a, grid)
        rhs = bo.inner_Y(bo.project_NY(bo.greens_Q(f, grid), grid), a, grid)
        floors = floor_fraction * bo.norm_V(f, grid) * bo.norm_V(a, grid)
        return IdentityReport(name, lhs, rhs, floors, grid.N, 0, 0)

    if profile is None:
        raise ExperimentError(f"identity {name!r} needs the medium for its oracle")
    sgrid = solver_grid or SolverGrid.reference(T=T, c1=profile.c1)
    if name == "blago1":
        f = trial_signals(grid, n_trials, seed)
        h = trial_signals(grid, n_trials, seed + 1)
        _, (sf,) = solve_neumann(profile, f, grid, sgrid, [T], t_end=T)
        _, (sh,) = solve_neumann(profile, h, grid, sgrid, [T], t_end=T)
        lhs = volume_inner_product(sf.u, sh.u, profile, sf.x)
        rhs = bo.inner_V(bo.connecting_K(ntd, f), h, grid)
        floors = floor_fraction * np.sqrt(
            volume_inner_product(sf.u, sf.u, profile, sf.x)
            * volume_inner_product(sh.u, sh.u, profile, sh.x))
    elif name == "blago2":
        h = trial_signals(grid, n_trials, seed)
        _, (sh,) = solve_neumann(profile, h, grid, sgrid, [T], t_end=T)
        one = np.ones_like(sh.x)
        lhs = volume_inner_product(sh.u, one, profile, sh.x)
        rhs = -bo.inner_V(h, bo.phi_T(grid), grid)
        floors = floor_fraction * np.sqrt(
            volume_inner_product(sh.u, sh.u, profile, sh.x)
            * volume_inner_product(one, one, profile, sh.x))
    else:
        a = trial_signals(grid, n_trials, seed, in_Y=True)
        _, (sa,) = solve_neumann(profile, a, grid, sgrid, [T], t_end=T)
        energy_b = -2 * bo.inner_V(
            a, bo.project_hat_P(bo.d_dt_discrete(ntd.apply(a), grid), grid), grid)
        if name == "energy":
            lhs = field_energy(sa, profile)
            rhs = energy_b
        else:
            da = bo.d_dt_discrete(a, grid)
            lhs = h1_norm_sq(sa, profile)
            rhs = (energy_b - bo.inner_V(da, bo.connecting_K(ntd, da), grid)
                   + bo.inner_V(a, bo.connecting_K(ntd, a), grid))
        floors = floor_fraction * np.abs(lhs)
    return IdentityReport(name, np.asarray(lhs), np.asarray(rhs), np.asarray(floors),
                          grid.N, sgrid.n_x, sgrid.n_t)


# -- convergence study ------------------------------------------------------------

@dataclass
class SweepRow:
    N: int
    alpha: float
    beta: float
    error: float
    relative_error: float
    near_origin_mass: float
    converged: bool
    failure: str | None = None


@dataclass
class SweepTable:
    rows: list[SweepRow]
    slope: float | None

    def as_records(self) -> list[dict]:
        return [vars(r).copy() for r in self.rows]


def schedule(N: int, value0: float, N0: int, power: float) -> float:
    """``value0 * (N0 / N) ** power``."""
    return value0 * (N0 / N) ** power


def loglog_slope(N, err) -> float | None:
    """Least-squares slope of ``log err`` against ``log N``; None if undefined."""
    N = np.asarray(N, dtype=float)
    err = np.asarray(err, dtype=float)
    ok = np.isfinite(err) & (err > 0)
    if np.unique(N[ok]).size < 2:
        return None
    return float(np.polyfit(np.log(N[ok]), np.log(err[ok]), 1)[0])


def _sweep_point(args) -> SweepRow:
    profile, r1, r2, N, alpha, beta, T, sgrid, cfg = args
    try:
        if cfg is not None:
            cfg = RegularizationConfig(**{**cfg, "alpha": alpha, "beta": beta})
        exp = focus_slab(profile, r1, r2, alpha, beta, N, T, sgrid, cfg=cfg)
    except Exception as exc:  # partial tables are allowed
        log.error("sweep point N=%d failed: %s", N, exc)
        return SweepRow(N, alpha, beta, float("nan"), float("nan"), float("nan"),
                        False, str(exc))
    return SweepRow(N, alpha, beta, exp.error, exp.relative_error,
                    exp.near_origin_mass, exp.converged)


def convergence_sweep(
    profile: MediumProfile,
    r1: float,
    r2: float,
    N_list,
    alpha0: float = 1e-3,
    beta0: float = 1.02e-4,
    N0: int | None = None,
    p_alpha: float = 0.0,
    p_beta: float = 0.0,
    T: float = 2.0,
    solver_grid: SolverGrid | None = None,
    cfg: dict | None = None,
    jobs: int = 1,
) -> SweepTable:
    """Focusing error against ``N`` with ``alpha(N) = alpha0 (N0/N)^p_alpha``
    (likewise ``beta``) and the fitted log-log slope."""
    N_list = [int(n) for n in N_list]
    if any(b < a for a, b in zip(N_list, N_list[1:])):
        raise ExperimentError("N_list must be ascending")
    N0 = N0 or N_list[0]
    tasks = [
        (profile, r1, r2, N, schedule(N, alpha0, N0, p_alpha),
         schedule(N, beta0, N0, p_beta), T, solver_grid, cfg)
        for N in N_list
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_sweep_point, tasks))
    else:
        rows = [_sweep_point(t) for t in tasks]
    return SweepTable(rows, loglog_slope([r.N for r in rows], [r.error for r in rows]))
