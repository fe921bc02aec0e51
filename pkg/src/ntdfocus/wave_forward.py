"""Forward simulation of ``u_tt = c(x)^2 u_xx`` on the truncated half-line.

The boundary ``x = 0`` carries the Neumann source ``u_x(0, t) = f(t)``
(ghost node ``u_{-1} = u_1 - 2 dx f``) and the far end ``x = x_max`` is
homogeneous Dirichlet.  ``x_max`` is chosen so that nothing reflected
there returns to ``x = 0`` before ``t = 2T``.

This module is the *measurement simulator and oracle*: it synthesizes
the NtD kernel, and it provides the volume integrals (inner products,
energies) that the control algorithm itself never sees.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numba import njit

from .medium import MediumProfile
from .ntd import NtdOperator
from .signals import TimeGrid, hat_basis, interpolate_pn  # noqa: F401  (re-export)

log = logging.getLogger(__name__)


class SolverConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SolverGrid:
    x_max: float
    n_x: int
    n_t: int
    horizon: float
    cfl_factor: float = 0.5

    @property
    def dx(self) -> float:
        return self.x_max / self.n_x

    @property
    def dt(self) -> float:
        return self.horizon / self.n_t

    @property
    def T(self) -> float:
        return self.horizon / 2

    @property
    def x(self) -> np.ndarray:
        return np.linspace(0.0, self.x_max, self.n_x + 1)

    @property
    def t(self) -> np.ndarray:
        return np.arange(self.n_t + 1) * self.dt

    @classmethod
    def reference(cls, T: float = 2.0, c1: float = 1.4, n_x: int = 2**13,
                  n_t: int = 2**15, **kw) -> "SolverGrid":
        return cls(x_max=1.1 * c1 * T, n_x=n_x, n_t=n_t, horizon=2 * T, **kw)

    def refined(self, factor: int = 2) -> "SolverGrid":
        return SolverGrid(self.x_max, self.n_x * factor, self.n_t * factor,
                          self.horizon, self.cfl_factor)

    def validate(self, profile: MediumProfile) -> None:
        if not 0 < self.cfl_factor < 1:
            raise SolverConfigError("cfl_factor must lie in (0, 1)")
        c_max = float(profile.speed(self.x).max())
        cfl = c_max * self.dt / self.dx
        if cfl > self.cfl_factor:
            raise SolverConfigError(
                f"CFL number {cfl:.3f} exceeds {self.cfl_factor}"
            )
        if abs(profile.x_max - self.x_max) > 1e-12 * self.x_max:
            raise SolverConfigError("profile and solver grid disagree on x_max")
        if profile.total_travel_time <= self.T:
            raise SolverConfigError(
                "domain too short: far-end reflections would reach x = 0 "
                "before t = 2T"
            )


@dataclass(frozen=True)
class FieldSnapshot:
    """``u`` and ``u_t`` on the solver nodes ``x`` at ``time``.

    ``u`` and ``ut`` may carry a leading batch axis.
    """

    x: np.ndarray
    u: np.ndarray
    ut: np.ndarray | None
    time: float


@njit(cache=True)
def _leapfrog(sig2, dx, forcing, n_steps, rec_steps, trace, rec):
    n_src = forcing.shape[0]
    n = sig2.shape[0]
    n_rec = rec_steps.shape[0]
    for b in range(n_src):
        um = np.zeros(n)
        u = np.zeros(n)
        up = np.zeros(n)
        ptr = 0
        while ptr < n_rec and rec_steps[ptr] == 0:
            rec[b, ptr, :] = um
            ptr += 1
        # first step from rest: u^1 = dt^2/2 c^2 u_xx^0 with the ghost node
        u[0] = -sig2[0] * dx * forcing[b, 0]
        trace[b, 0] = 0.0
        trace[b, 1] = u[0]
        while ptr < n_rec and rec_steps[ptr] == 1:
            rec[b, ptr, :] = u
            ptr += 1
        for s in range(1, n_steps):
            up[0] = (2.0 * u[0] - um[0]
                     + sig2[0] * (2.0 * u[1] - 2.0 * u[0] - 2.0 * dx * forcing[b, s]))
            for i in range(1, n - 1):
                up[i] = 2.0 * u[i] - um[i] + sig2[i] * (u[i + 1] - 2.0 * u[i] + u[i - 1])
            up[n - 1] = 0.0
            um, u, up = u, up, um
            trace[b, s + 1] = u[0]
            while ptr < n_rec and rec_steps[ptr] == s + 1:
                rec[b, ptr, :] = u
                ptr += 1


def solve_neumann(
    profile: MediumProfile,
    f,
    tgrid: TimeGrid,
    grid: SolverGrid,
    snapshot_times: Sequence[float] = (),
    t_end: float | None = None,
) -> tuple[np.ndarray, list[FieldSnapshot]]:
    """March the leapfrog scheme driven by the Neumann source ``f``.

    ``f`` holds nodal values on ``tgrid`` (optionally with a leading batch
    axis) and is linearly interpolated onto the solver steps.  Returns the
    boundary trace ``u(0, t_j)`` resampled on ``tgrid`` and one snapshot per
    requested time (``u_t`` by centered difference).  With ``t_end`` the
    march stops early; trace nodes past ``t_end`` are left at zero.
    """
    grid.validate(profile)
    f = tgrid.check(f)
    batched = f.ndim == 2
    F = np.atleast_2d(f)
    if abs(tgrid.horizon - grid.horizon) > 1e-12 * grid.horizon:
        raise SolverConfigError("time grid and solver grid have different horizons")

    dt = grid.dt
    snap_steps = []
    for ts in snapshot_times:
        if not 0 <= ts <= grid.horizon + 1e-12:
            raise ValueError(f"snapshot time {ts} outside [0, {grid.horizon}]")
        m = int(round(ts / dt))
        if abs(m * dt - ts) > 1e-9 * max(1.0, grid.horizon):
            raise ValueError(f"snapshot time {ts} is not on a solver step")
        snap_steps.append(m)

    n_steps = grid.n_t if t_end is None else min(grid.n_t, int(np.ceil(t_end / dt)))
    if snap_steps:
        n_steps = max(n_steps, max(snap_steps) + 1)
    rec_steps = sorted({s + d for s in snap_steps for d in (-1, 0, 1) if s + d >= 0})
    rec_steps = np.asarray(rec_steps, dtype=np.int64)

    t_steps = np.arange(n_steps + 1) * dt
    forcing = np.stack([np.interp(t_steps, tgrid.t, row) for row in F])
    x = grid.x
    sig2 = (profile.speed(x) * dt / grid.dx) ** 2

    trace = np.zeros((F.shape[0], n_steps + 1))
    rec = np.zeros((F.shape[0], len(rec_steps), x.size))
    _leapfrog(sig2, grid.dx, forcing, n_steps, rec_steps, trace, rec)

    t_keep = tgrid.t <= t_steps[-1] + 1e-12
    out_trace = np.zeros_like(F)
    out_trace[:, t_keep] = np.stack([np.interp(tgrid.t[t_keep], t_steps, tr) for tr in trace])

    index = {int(s): k for k, s in enumerate(rec_steps)}
    snaps = []
    for ts, m in zip(snapshot_times, snap_steps):
        u = rec[:, index[m]]
        if m >= 1:
            ut = (rec[:, index[m + 1]] - rec[:, index[m - 1]]) / (2 * dt)
        else:
            ut = np.zeros_like(u)
        if not batched:
            u, ut = u[0], ut[0]
        snaps.append(FieldSnapshot(x=x, u=u, ut=ut, time=float(ts)))
    return (out_trace if batched else out_trace[0]), snaps


@njit(cache=True)
def _leapfrog_free(sig2, u0, u1, n_steps, trace):
    n = sig2.shape[0]
    for b in range(u0.shape[0]):
        um = u0[b].copy()
        u = u1[b].copy()
        up = np.zeros(n)
        trace[b, 0] = um[0]
        trace[b, 1] = u[0]
        for s in range(1, n_steps):
            up[0] = 2.0 * u[0] - um[0] + sig2[0] * (2.0 * u[1] - 2.0 * u[0])
            for i in range(1, n - 1):
                up[i] = 2.0 * u[i] - um[i] + sig2[i] * (u[i + 1] - 2.0 * u[i] + u[i - 1])
            up[n - 1] = 0.0
            um, u, up = u, up, um
            trace[b, s + 1] = u[0]


def propagate_state(
    profile: MediumProfile,
    u0,
    ut0,
    grid: SolverGrid,
    duration: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Free evolution (``u_x(0, t) = 0``) from Cauchy data on the solver nodes.

    Returns ``(tau, trace)`` with ``tau`` the elapsed time since the initial
    state and ``trace`` the boundary value ``u(0, tau)``.
    """
    grid.validate(profile)
    U0 = np.atleast_2d(np.asarray(u0, dtype=float))
    V0 = np.atleast_2d(np.asarray(ut0, dtype=float))
    if U0.shape != V0.shape or U0.shape[-1] != grid.n_x + 1:
        raise SolverConfigError("initial data must live on the solver nodes")
    if duration <= 0:
        raise ValueError("duration must be positive")
    dt = grid.dt
    n_steps = max(2, int(np.ceil(duration / dt)))
    sig2 = (profile.speed(grid.x) * dt / grid.dx) ** 2
    lap = np.zeros_like(U0)
    lap[:, 1:-1] = U0[:, 2:] - 2 * U0[:, 1:-1] + U0[:, :-2]
    lap[:, 0] = 2 * (U0[:, 1] - U0[:, 0])
    U1 = U0 + dt * V0 + 0.5 * sig2 * lap
    U1[:, -1] = 0.0
    trace = np.zeros((U0.shape[0], n_steps + 1))
    _leapfrog_free(sig2, np.ascontiguousarray(U0), np.ascontiguousarray(U1), n_steps, trace)
    tau = np.arange(n_steps + 1) * dt
    squeeze = np.ndim(u0) == 1
    return tau, (trace[0] if squeeze else trace)


def min_steps_per_node() -> int:
    return 4


def build_ntd(profile: MediumProfile, tgrid: TimeGrid, grid: SolverGrid) -> NtdOperator:
    """One forward solve with source ``phi_1``; the rest follows from time
    translation invariance."""
    ratio = grid.n_t / (2 * tgrid.N)
    if ratio != int(ratio) or ratio < min_steps_per_node():
        raise SolverConfigError(
            f"solver grid with n_t={grid.n_t} does not resolve N={tgrid.N}: need "
            f"n_t a multiple of 2N with at least {min_steps_per_node()} steps per node"
        )
    trace, _ = solve_neumann(profile, hat_basis(1, tgrid), tgrid, grid)
    trace[0] = 0.0
    meta = {
        "profile": profile.digest(),
        "N": tgrid.N,
        "T": tgrid.T,
        "n_x": grid.n_x,
        "n_t": grid.n_t,
        "x_max": grid.x_max,
    }
    return NtdOperator(kernel=trace, grid=tgrid, meta=meta)


def _weights(x: np.ndarray) -> np.ndarray:
    dx = np.diff(x)
    w = np.zeros_like(x)
    w[:-1] += dx / 2
    w[1:] += dx / 2
    return w


def volume_inner_product(s1, s2, profile: MediumProfile, x=None) -> np.ndarray:
    """Trapezoid ``int s1 s2 c^-2 dx`` (snapshots use their ``u``)."""
    if isinstance(s1, FieldSnapshot):
        x = s1.x if x is None else x
        s1 = s1.u
    if isinstance(s2, FieldSnapshot):
        x = s2.x if x is None else x
        s2 = s2.u
    if x is None:
        raise ValueError("spatial nodes required for plain arrays")
    s1 = np.asarray(s1, float)
    s2 = np.asarray(s2, float)
    if s1.shape[-1] != x.size or s2.shape[-1] != x.size:
        raise ValueError("grid mismatch between field samples")
    w = _weights(x) / profile.speed(x) ** 2
    return np.sum(s1 * s2 * w, axis=-1)


def field_energy(s: FieldSnapshot, profile: MediumProfile) -> np.ndarray:
    """``int (u_t^2 c^-2 + u_x^2) dx``."""
    if s.ut is None:
        raise ValueError("snapshot has no time derivative")
    kinetic = volume_inner_product(s.ut, s.ut, profile, s.x)
    ux = np.diff(s.u, axis=-1) / np.diff(s.x)
    potential = np.sum(ux**2 * np.diff(s.x), axis=-1)
    return kinetic + potential


def h1_norm_sq(s: FieldSnapshot, profile: MediumProfile) -> np.ndarray:
    """``||u||^2 + ||u_x||^2`` with the ``c^-2 dx`` weight on the value part."""
    ux = np.diff(s.u, axis=-1) / np.diff(s.x)
    return volume_inner_product(s.u, s.u, profile, s.x) + np.sum(
        ux**2 * np.diff(s.x), axis=-1
    )
