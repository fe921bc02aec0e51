"""Boundary time signals on the uniform node grid ``t_j = j h``, ``h = T / N``.

A signal is a plain float array of ``2N + 1`` nodal values on ``[0, 2T]``.
The piecewise-affine hats ``phi_n`` (``n = 1 .. 2N-1``) span the discrete
space; a signal in that space has zero end values and its interior nodal
values are its hat coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np


class SignalError(ValueError):
    pass


@dataclass(frozen=True)
class TimeGrid:
    N: int
    T: float

    def __post_init__(self):
        if self.N < 1:
            raise SignalError("N must be positive")
        if self.T <= 0:
            raise SignalError("T must be positive")

    @property
    def h(self) -> float:
        return self.T / self.N

    @property
    def n_nodes(self) -> int:
        return 2 * self.N + 1

    @property
    def horizon(self) -> float:
        return 2 * self.T

    @cached_property
    def t(self) -> np.ndarray:
        return np.arange(self.n_nodes) * self.h

    @cached_property
    def weights(self) -> np.ndarray:
        """Composite trapezoid weights on ``[0, 2T]``."""
        w = np.full(self.n_nodes, self.h)
        w[0] = w[-1] = self.h / 2
        return w

    def zeros(self) -> np.ndarray:
        return np.zeros(self.n_nodes)

    def check(self, f) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        if f.shape[-1] != self.n_nodes:
            raise SignalError(
                f"signal has {f.shape[-1]} nodes, grid expects {self.n_nodes}"
            )
        return f


def hat_basis(n: int, grid: TimeGrid) -> np.ndarray:
    """Nodal values of ``phi_{n,N}``: 1 at ``t_n``, 0 at every other node."""
    if not 1 <= n <= 2 * grid.N - 1:
        raise SignalError(f"hat index {n} outside 1..{2 * grid.N - 1}")
    f = grid.zeros()
    f[n] = 1.0
    return f


def hat_eval(f, grid: TimeGrid, t) -> np.ndarray:
    """Evaluate the piecewise-affine function with nodal values ``f`` at ``t``."""
    return np.interp(t, grid.t, grid.check(f))


def interpolate_pn(f: Callable | np.ndarray, grid: TimeGrid) -> np.ndarray:
    """Nodal interpolant ``P^N f = sum_j f(jh) phi_j`` (end nodes zeroed).

    ``f`` is either a callable of time or samples on a finer uniform grid
    of ``[0, 2T]`` (linearly interpolated to the nodes).
    """
    if callable(f):
        vals = np.asarray(f(grid.t), dtype=float) * np.ones(grid.n_nodes)
    else:
        samples = np.asarray(f, dtype=float)
        t_fine = np.linspace(0.0, grid.horizon, samples.shape[-1])
        vals = np.interp(grid.t, t_fine, samples)
    vals = vals.copy()
    vals[0] = vals[-1] = 0.0
    return vals


def random_band_limited(
    grid: TimeGrid,
    rng: np.random.Generator,
    n_modes: int = 6,
    k_max: int = 12,
    support_T: bool = False,
) -> np.ndarray:
    """Random sine series vanishing at the ends of ``[0, 2T]``.

    With ``support_T`` the series lives on ``[0, T]`` and is zero after,
    giving an element of the space of sources supported in ``(0, T)``.
    """
    length = grid.T if support_T else grid.horizon
    ks = rng.choice(np.arange(1, k_max + 1), size=n_modes, replace=False)
    amps = rng.standard_normal(n_modes)
    t = grid.t
    f = sum(a * np.sin(np.pi * k * t / length) for a, k in zip(amps, ks))
    if support_T:
        f = np.where(t < grid.T, f, 0.0)
    f[0] = f[-1] = 0.0
    if support_T:
        f[grid.N] = 0.0
    return f
