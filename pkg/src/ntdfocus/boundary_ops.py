"""Operators acting on boundary signals, assembled from the NtD map alone.

Every operator takes nodal arrays on a :class:`TimeGrid` (optionally with
leading batch axes) and returns nodal arrays.  Outputs represent elements
of the hat space, so end nodes are zero unless stated otherwise.  All
integrals use the composite trapezoid rule on the node grid.

Nothing here may depend on the medium or on interior wave fields.
"""

from __future__ import annotations

import numpy as np

from .ntd import NtdOperator
from .signals import SignalError, TimeGrid


def _interior(f: np.ndarray) -> np.ndarray:
    f = np.array(f, dtype=float)
    f[..., 0] = 0.0
    f[..., -1] = 0.0
    return f


def time_reverse(f) -> np.ndarray:
    """``(R f)(t) = f(2T - t)``, i.e. node ``j`` goes to node ``2N - j``."""
    return np.asarray(f, dtype=float)[..., ::-1].copy()


def time_filter(f, grid: TimeGrid) -> np.ndarray:
    """``(J f)(t) = 1/2 int_t^{2T-t} f(s) ds`` for ``t < T``, zero otherwise."""
    f = grid.check(f)
    h = grid.h
    # cumulative trapezoid: C[j] = int_0^{t_j} f
    C = np.zeros_like(f)
    C[..., 1:] = np.cumsum(0.5 * h * (f[..., 1:] + f[..., :-1]), axis=-1)
    N = grid.N
    j = np.arange(N)
    out = np.zeros_like(f)
    out[..., :N] = 0.5 * (C[..., 2 * N - j] - C[..., j])
    return _interior(out)


def phi_T(grid: TimeGrid) -> np.ndarray:
    """Nodal samples of ``(T - t)_+``.  The value ``T`` at ``t = 0`` is kept."""
    return np.clip(grid.T - grid.t, 0.0, None)


def phi_T_discrete(grid: TimeGrid) -> np.ndarray:
    """``P^N (T - t)_+`` (end nodes zeroed), the right-hand side source."""
    return _interior(phi_T(grid))


def project_P(f, grid: TimeGrid, r: float) -> np.ndarray:
    """Keep nodes with ``T - r < t_j < T``, zero the rest."""
    if not 0 < r <= grid.T:
        raise SignalError(f"radius r={r} outside (0, T]")
    f = grid.check(f)
    t = grid.t
    tol = 1e-9 * grid.h
    mask = (t > grid.T - r + tol) & (t < grid.T - tol)
    return np.where(mask, f, 0.0)


def project_hat_P(f, grid: TimeGrid) -> np.ndarray:
    """Multiplication by the indicator of ``(0, T)``."""
    f = grid.check(f)
    mask = np.zeros(grid.n_nodes, dtype=bool)
    mask[1:grid.N] = True
    return np.where(mask, f, 0.0)


def greens_kernel(t, s, T: float) -> np.ndarray:
    """Green's function of ``1 - d^2/dt^2`` on ``(0, 2T)`` with zero ends."""
    t, s = np.broadcast_arrays(np.asarray(t, float), np.asarray(s, float))
    lo = np.minimum(t, s)
    hi = np.maximum(t, s)
    return np.sinh(lo) * np.sinh(2 * T - hi) / np.sinh(2 * T)


def greens_Q(f, grid: TimeGrid) -> np.ndarray:
    """``(Q f)(t_i) = sum_j w_j g(t_i, t_j) f_j``.

    The kernel is separable on each side of the diagonal, so the sum is
    evaluated with two cumulative sums in O(n).
    """
    f = grid.check(f)
    t = grid.t
    T = grid.T
    wf = grid.weights * f
    a = np.sinh(t)
    b = np.sinh(2 * T - t)
    left = np.cumsum(wf * a, axis=-1)  # sum_{j<=i} w_j f_j sinh(t_j)
    right = np.cumsum((wf * b)[..., ::-1], axis=-1)[..., ::-1]  # sum_{j>=i}
    right = np.concatenate([right[..., 1:], np.zeros_like(right[..., :1])], axis=-1)
    out = (b * left + a * right) / np.sinh(2 * T)
    return _interior(out)


def project_NY(f, grid: TimeGrid, tol: float = 1e-8) -> np.ndarray:
    """Support-shrinking projector onto signals vanishing outside ``(0, T)``.

    ``f(t) - sinh(t)/sinh(T) f(T)`` on ``[0, T]``, zero on ``(T, 2T]``.
    """
    f = grid.check(f)
    scale = max(1.0, float(np.max(np.abs(f)))) if f.size else 1.0
    if np.any(np.abs(f[..., 0]) > tol * scale) or np.any(np.abs(f[..., -1]) > tol * scale):
        raise SignalError("N_Y expects a signal vanishing at t = 0 and t = 2T")
    N = grid.N
    t = grid.t
    out = np.zeros_like(f)
    fT = f[..., N:N + 1]
    out[..., :N + 1] = f[..., :N + 1] - np.sinh(t[:N + 1]) / np.sinh(grid.T) * fT
    out[..., N] = 0.0
    return _interior(out)


def d_dt_discrete(f, grid: TimeGrid) -> np.ndarray:
    """Forward differences ``(f_{j+1} - f_j)/h`` at nodes ``j = 1 .. 2N-2``."""
    f = grid.check(f)
    out = np.zeros_like(f)
    out[..., 1:-2] = (f[..., 2:-1] - f[..., 1:-2]) / grid.h
    return out


def inner_V(f, g, grid: TimeGrid):
    """Trapezoid ``L^2(0, 2T)`` pairing."""
    f = grid.check(f)
    g = grid.check(g)
    return np.sum(grid.weights * f * g, axis=-1)


def inner_Y(a1, a2, grid: TimeGrid):
    """``<a1, a2>_V + <a1', a2'>_V`` with the derivative pairing taken over
    every cell, i.e. the exact H^1 seminorm of the piecewise-affine signals."""
    a1 = grid.check(a1)
    a2 = grid.check(a2)
    d1 = np.diff(a1, axis=-1)
    d2 = np.diff(a2, axis=-1)
    return inner_V(a1, a2, grid) + np.sum(d1 * d2, axis=-1) / grid.h


def norm_V(f, grid: TimeGrid):
    return np.sqrt(inner_V(f, f, grid))


def norm_Y(f, grid: TimeGrid):
    return np.sqrt(inner_Y(f, f, grid))


def _grid_of(ntd: NtdOperator, f) -> TimeGrid:
    grid = ntd.grid
    grid.check(f)
    return grid


def connecting_K(ntd: NtdOperator, f) -> np.ndarray:
    """``K f = R Lambda R J f - J Lambda f``."""
    grid = _grid_of(ntd, f)
    f = _interior(f)
    Jf = _interior(time_filter(f, grid))
    return ntd.apply_adjoint(Jf) - _interior(time_filter(ntd.apply(f), grid))


def connecting_K_sym(ntd: NtdOperator, f) -> np.ndarray:
    """``(K + K^T) / 2`` in the V pairing (opt-in symmetrization)."""
    grid = _grid_of(ntd, f)
    return 0.5 * (connecting_K(ntd, f) + connecting_K_transpose(ntd, f, grid))


def connecting_K_transpose(ntd: NtdOperator, f, grid: TimeGrid | None = None) -> np.ndarray:
    """Matrix transpose of :func:`connecting_K` on interior coefficients."""
    grid = grid or ntd.grid
    f = _interior(f)
    # K = A^T J - J A  with A = Lambda, J the (nodal) time filter
    # K^T = J^T A - A^T J^T
    return _time_filter_T(ntd.apply(f), grid) - ntd.apply_adjoint(_time_filter_T(f, grid))


def _time_filter_T(f, grid: TimeGrid) -> np.ndarray:
    """Matrix transpose of ``time_filter`` restricted to interior nodes."""
    g = _interior(grid.check(f))
    N = grid.N
    k = np.arange(grid.n_nodes)
    gl = np.zeros_like(g)
    gl[..., 1:N] = g[..., 1:N]  # only rows 1..N-1 of J are nonzero
    S = np.cumsum(gl, axis=-1)  # S[m] = sum_{i=1}^{m} g_i
    m = np.clip(np.minimum(k, 2 * N - k) - 1, 0, None)
    out = S[..., m]
    out = out + 0.5 * np.where((k >= 1) & (k <= N - 1), gl, 0.0)
    mirror = gl[..., np.clip(2 * N - k, 0, grid.n_nodes - 1)]
    out = out + 0.5 * np.where((k >= N + 1) & (k <= 2 * N - 1), mirror, 0.0)
    return _interior(0.5 * grid.h * out)


def operator_L(ntd: NtdOperator, a, check: bool = True) -> np.ndarray:
    """``L a = N_Y Q (R Lambda R d_t Phat - Phat d_t Lambda + K) a`` for ``a`` in Y."""
    grid = _grid_of(ntd, a)
    a = np.asarray(a, dtype=float)
    if check:
        _check_Y(a, grid)
    term1 = ntd.apply_adjoint(d_dt_discrete(project_hat_P(a, grid), grid))
    term2 = project_hat_P(d_dt_discrete(ntd.apply(a), grid), grid)
    term3 = connecting_K(ntd, a)
    return project_NY(greens_Q(term1 - term2 + term3, grid), grid)


def rhs_a(ntd: NtdOperator, h_alpha, r: float) -> np.ndarray:
    """``-N_Y Q d_t K P h_alpha``."""
    grid = ntd.grid
    Ph = project_P(h_alpha, grid, r)
    v = d_dt_discrete(connecting_K(ntd, Ph), grid)
    return -project_NY(greens_Q(v, grid), grid)


def in_Y(a, grid: TimeGrid, tol: float = 1e-10) -> bool:
    a = grid.check(a)
    scale = max(1e-300, float(np.max(np.abs(a)))) if np.any(a) else 1.0
    return bool(np.all(np.abs(a[..., grid.N:]) <= tol * scale)
                and np.all(np.abs(a[..., 0]) <= tol * scale))


def _check_Y(a, grid: TimeGrid):
    if not in_Y(a, grid):
        raise SignalError("expected a signal supported in (0, T)")


def materialize(op, grid: TimeGrid, nodes: np.ndarray | None = None) -> np.ndarray:
    """Dense matrix of a linear nodal operator on the chosen basis nodes.

    Column ``k`` is ``op(e_{nodes[k]})`` restricted to ``nodes``; by default
    the interior nodes ``1 .. 2N-1``.
    """
    if nodes is None:
        nodes = np.arange(1, grid.n_nodes - 1)
    E = np.zeros((len(nodes), grid.n_nodes))
    E[np.arange(len(nodes)), nodes] = 1.0
    cols = np.stack([op(e) for e in E])
    return cols[:, nodes].T


def dump_matrix_csv(matrix: np.ndarray, path) -> None:
    np.savetxt(path, matrix, delimiter=",", fmt="%.17g")
