"""The discretized Neumann-to-Dirichlet map as a causal convolution.

Only the response to the first hat is stored.  Translation invariance in
time gives the response to every other hat, so the operator on hat
coefficients is a lower-triangular Toeplitz matrix.  This module knows
nothing about the medium or the wave solver.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import toeplitz
from scipy.signal import fftconvolve

from .signals import SignalError, TimeGrid


@dataclass(frozen=True, eq=False)
class NtdOperator:
    """``kernel[m]`` is the boundary trace of the wave from ``phi_1`` at ``t = m h``."""

    kernel: np.ndarray
    grid: TimeGrid
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        k = np.asarray(self.kernel, dtype=float)
        if k.shape != (self.grid.n_nodes,):
            raise SignalError("kernel length must match the node grid")
        if k[0] != 0.0:
            raise SignalError("kernel must vanish at t = 0 (causality)")
        k.setflags(write=False)
        object.__setattr__(self, "kernel", k)

    @property
    def N(self) -> int:
        return self.grid.N

    @property
    def taps(self) -> np.ndarray:
        """``Lambda_m`` for ``m = 1 .. 2N-1``."""
        return self.kernel[1:-1]

    def apply(self, f) -> np.ndarray:
        """``(Lambda f)_j = sum_{k<=j} f_k Lambda_{j-k+1}`` on interior nodes."""
        f = self.grid.check(f)
        n = 2 * self.N - 1
        out = np.zeros_like(f)
        out[..., 1:-1] = fftconvolve(f[..., 1:-1], self.taps[(None,) * (f.ndim - 1)],
                                     axes=-1)[..., :n]
        return out

    def apply_adjoint(self, f) -> np.ndarray:
        """``R Lambda R f`` (the V-adjoint of ``apply``)."""
        f = self.grid.check(f)
        return self.apply(f[..., ::-1])[..., ::-1]

    def __call__(self, f) -> np.ndarray:
        return self.apply(f)

    def matrix(self) -> np.ndarray:
        """Lower-triangular Toeplitz matrix on the interior hat coefficients."""
        taps = self.taps
        return toeplitz(taps, np.zeros_like(taps))

    def digest(self) -> str:
        return hashlib.sha256(self.kernel.tobytes()).hexdigest()
