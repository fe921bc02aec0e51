"""Wave-speed profiles on the truncated half-line and their travel-time geometry.

The travel-time distance from the boundary point ``x = 0`` is
``d(0, x) = int_0^x dx' / c(x')``.  Everything here is computed from a
cumulative composite-trapezoid table on a uniform node grid, and inverted
by monotone search on that table.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.integrate import trapezoid


class MediumError(ValueError):
    """Raised for invalid profiles or out-of-domain geometry queries."""


@dataclass(frozen=True)
class Bump:
    """Raised-cosine perturbation ``amplitude * cos(pi (x - center) / width)**2``
    supported on ``|x - center| < width / 2``."""

    center: float
    width: float
    amplitude: float

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        s = (x - self.center) / self.width
        inside = np.abs(s) < 0.5
        return np.where(inside, self.amplitude * np.cos(np.pi * s) ** 2, 0.0)

    @property
    def support(self) -> tuple[float, float]:
        return self.center - self.width / 2, self.center + self.width / 2


@dataclass(frozen=True)
class MediumProfile:
    """Variable wave speed ``c(x)`` on ``[0, x_max]``.

    Either ``bumps`` (analytic raised cosines added to 1) or ``samples``
    (speeds at the ``n_cells`` cell centers, linearly interpolated) define
    the speed.  ``c0, c1`` bound the speed and ``(l0, l1)`` contains the
    support of ``c - 1``.
    """

    x_max: float
    n_cells: int
    c0: float
    c1: float
    l0: float
    l1: float
    bumps: tuple[Bump, ...] = ()
    samples: tuple[float, ...] | None = None
    bound_tol: float = field(default=1e-12, compare=False)

    def __post_init__(self):
        if not (0 < self.l0 < self.l1 < self.x_max):
            raise MediumError("require 0 < l0 < l1 < x_max")
        if not (0 < self.c0 <= 1.0 <= self.c1):
            raise MediumError("require 0 < c0 <= 1 <= c1")
        if self.n_cells < 2:
            raise MediumError("n_cells must be at least 2")
        if self.samples is not None:
            if self.bumps:
                raise MediumError("give either bumps or samples, not both")
            if len(self.samples) != self.n_cells:
                raise MediumError(
                    f"expected {self.n_cells} samples, got {len(self.samples)}"
                )
        for b in self.bumps:
            lo, hi = b.support
            if lo < self.l0 or hi > self.l1 or b.width <= 0:
                raise MediumError(f"bump {b} leaves the support ({self.l0}, {self.l1})")

        c = np.concatenate([self.c_samples, self.speed(self.nodes)])
        tol = self.bound_tol
        if c.min() < self.c0 - tol or c.max() > self.c1 + tol:
            raise MediumError(
                f"speed range [{c.min():.6g}, {c.max():.6g}] violates "
                f"[{self.c0}, {self.c1}]"
            )
        centers = self.cell_centers
        outside = (centers <= self.l0) | (centers >= self.l1)
        if np.any(np.abs(self.c_samples[outside] - 1.0) > tol):
            raise MediumError("c must equal 1 outside (l0, l1)")

    # -- sampling -------------------------------------------------------
    @property
    def dx(self) -> float:
        return self.x_max / self.n_cells

    @cached_property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.x_max, self.n_cells + 1)

    @cached_property
    def cell_centers(self) -> np.ndarray:
        return (np.arange(self.n_cells) + 0.5) * self.dx

    @cached_property
    def c_samples(self) -> np.ndarray:
        if self.samples is not None:
            return np.asarray(self.samples, dtype=float)
        return self.speed(self.cell_centers)

    def speed(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.samples is not None:
            return np.interp(x, self.cell_centers, np.asarray(self.samples, float))
        c = np.ones_like(x)
        for b in self.bumps:
            c = c + b(x)
        return c

    # -- travel-time geometry -------------------------------------------
    @cached_property
    def travel_times(self) -> np.ndarray:
        """Cumulative trapezoid ``d(0, x_i)`` at the profile nodes."""
        slowness = 1.0 / self.speed(self.nodes)
        steps = 0.5 * (slowness[1:] + slowness[:-1]) * self.dx
        return np.concatenate([[0.0], np.cumsum(steps)])

    @property
    def total_travel_time(self) -> float:
        return float(self.travel_times[-1])

    def _check_x(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(x < 0) or np.any(x > self.x_max * (1 + 1e-14)):
            raise MediumError(f"coordinate outside [0, {self.x_max}]")
        return x

    def distance_from_boundary(self, x):
        x = self._check_x(x)
        return np.interp(x, self.nodes, self.travel_times)

    def to_dict(self) -> dict:
        d = {
            "x_max": self.x_max,
            "n_cells": self.n_cells,
            "bounds": {"c0": self.c0, "c1": self.c1, "l0": self.l0, "l1": self.l1},
        }
        if self.samples is not None:
            d["kind"] = "samples"
            d["c"] = list(self.samples)
        else:
            d["kind"] = "bumps"
            d["bumps"] = [
                {"center": b.center, "width": b.width, "amplitude": b.amplitude}
                for b in self.bumps
            ]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MediumProfile":
        b = d["bounds"]
        common = dict(
            x_max=float(d["x_max"]),
            n_cells=int(d["n_cells"]),
            c0=float(b["c0"]),
            c1=float(b["c1"]),
            l0=float(b["l0"]),
            l1=float(b["l1"]),
        )
        kind = d.get("kind", "bumps")
        if kind == "samples":
            return cls(samples=tuple(float(v) for v in d["c"]), **common)
        if kind == "bumps":
            bumps = tuple(
                Bump(float(e["center"]), float(e["width"]), float(e["amplitude"]))
                for e in d.get("bumps", [])
            )
            return cls(bumps=bumps, **common)
        raise MediumError(f"unknown profile kind {kind!r}")

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MediumProfile":
        return cls.from_dict(json.loads(text))

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]

    def with_cells(self, n_cells: int) -> "MediumProfile":
        if self.samples is not None:
            c = np.interp(
                (np.arange(n_cells) + 0.5) * self.x_max / n_cells,
                self.cell_centers,
                self.c_samples,
            )
            return MediumProfile(
                self.x_max, n_cells, self.c0, self.c1, self.l0, self.l1,
                samples=tuple(c),
            )
        return MediumProfile(
            self.x_max, n_cells, self.c0, self.c1, self.l0, self.l1, bumps=self.bumps
        )


def travel_time(profile: MediumProfile, x1: float, x2: float) -> float:
    """Trapezoid approximation of ``int_{x1}^{x2} dx / c(x)``."""
    if x1 > x2:
        raise MediumError("require x1 <= x2")
    d = profile.distance_from_boundary([x1, x2])
    return float(d[1] - d[0])


def point_at_travel_time(profile: MediumProfile, r):
    """The point ``x(r)`` with ``d(0, x(r)) = r``.

    Inverts the monotone cumulative table; within a cell the table is
    linear, so the inverse is exact on the discrete geometry.
    """
    r_arr = np.asarray(r, dtype=float)
    table = profile.travel_times
    if np.any(r_arr < 0) or np.any(r_arr > table[-1]):
        raise MediumError(
            f"travel time outside [0, {table[-1]:.6g}] reachable in the domain"
        )
    x = np.interp(r_arr, table, profile.nodes)
    return float(x) if x.ndim == 0 else x


def domain_of_influence(profile: MediumProfile, r: float) -> tuple[float, float]:
    """``M(r) = [0, x(r)]``."""
    if r < 0:
        raise MediumError("r must be non-negative")
    return 0.0, point_at_travel_time(profile, r)


def slab_indicator(profile: MediumProfile, r1: float, r2: float, x) -> np.ndarray:
    """Samples of the indicator of ``M(r2) \\ M(r1) = (x(r1), x(r2)]``.

    With ``r1 == 0`` the closed set ``M(r2)`` (boundary point included) is
    returned.
    """
    if not (0 <= r1 < r2):
        raise MediumError("require 0 <= r1 < r2")
    x = np.asarray(x, dtype=float)
    hi = point_at_travel_time(profile, r2)
    if r1 == 0:
        return ((x >= 0) & (x <= hi)).astype(float)
    lo = point_at_travel_time(profile, r1)
    return ((x > lo) & (x <= hi)).astype(float)


def weighted_measure(profile: MediumProfile, x, values) -> float:
    """Trapezoid ``int values(x) c(x)^-2 dx`` on the given nodes."""
    x = np.asarray(x, dtype=float)
    w = np.asarray(values, dtype=float) / profile.speed(x) ** 2
    return float(trapezoid(w, x))


def unit_profile(x_max: float = 3.08, n_cells: int = 2**13) -> MediumProfile:
    """Homogeneous medium ``c = 1`` with the reference bounds."""
    return MediumProfile(x_max, n_cells, c0=0.8, c1=1.4, l0=0.05, l1=0.55)


REFERENCE_BUMPS: Sequence[Bump] = (
    Bump(center=0.15, width=0.18, amplitude=0.4),
    Bump(center=0.41, width=0.26, amplitude=-0.2),
)


def reference_profile(x_max: float = 3.08, n_cells: int = 2**13) -> MediumProfile:
    """Canonical bumpy profile: one fast lens reaching 1.4 and one slow lens
    reaching 0.8, both inside ``(0.05, 0.55)``."""
    return MediumProfile(
        x_max, n_cells, c0=0.8, c1=1.4, l0=0.05, l1=0.55, bumps=tuple(REFERENCE_BUMPS)
    )
