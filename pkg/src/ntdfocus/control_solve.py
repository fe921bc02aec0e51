"""Regularized normal equations for the focusing sources, from boundary data only.

``solve_h`` finds the source whose wave at time ``T`` approximates the
indicator of a domain of influence; ``solve_a`` finds a source in Y whose
wave has (nearly) zero value and a time derivative matching the first
wave.  Both are solved by restarted GMRES or by the fixed-point iteration
``g_n = g_0 + S g_{n-1}`` with ``S = (1 - alpha/omega) I - L/omega``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import boundary_ops as bo
from .ntd import NtdOperator

log = logging.getLogger(__name__)

Operator = Callable[[np.ndarray], np.ndarray]


class SolverSetupError(ValueError):
    pass


@dataclass
class GmresConfig:
    outer_max: int = 6
    restart: int = 10
    tol: float = 1e-12


@dataclass
class NeumannConfig:
    n_max: int = 200_000
    tol: float = 1e-12
    power_steps: int = 30
    omega_margin: float = 2.2


@dataclass
class RegularizationConfig:
    alpha: float = 1e-3
    beta: float = 1.02e-4
    omega: float | str = "auto"
    gmres: GmresConfig = field(default_factory=GmresConfig)
    neumann: NeumannConfig = field(default_factory=NeumannConfig)
    method: str = "gmres"
    symmetrize: bool = True

    def __post_init__(self):
        if isinstance(self.gmres, dict):
            self.gmres = GmresConfig(**self.gmres)
        if isinstance(self.neumann, dict):
            self.neumann = NeumannConfig(**self.neumann)
        if self.method not in ("gmres", "neumann_iteration"):
            raise SolverSetupError(f"unknown method {self.method!r}")


@dataclass
class SolveReport:
    solution: np.ndarray
    residual_history: list[float]
    outer_iterations: int
    converged: bool
    method: str
    inner_iterations: int = 0
    final_relative_residual: float = float("nan")
    info: dict = field(default_factory=dict)

    def to_dict(self, include_solution: bool = True) -> dict:
        d = asdict(self)
        d["solution"] = self.solution.tolist() if include_solution else None
        return d

    def to_json(self, include_solution: bool = True) -> str:
        return json.dumps(self.to_dict(include_solution), sort_keys=True)


# -- Krylov ---------------------------------------------------------------

def gmres_restarted(
    op: Operator | np.ndarray,
    rhs: np.ndarray,
    cfg: GmresConfig | None = None,
    x0: np.ndarray | None = None,
) -> SolveReport:
    """Restarted GMRES(m) with Givens rotations.

    ``residual_history`` holds the relative residual after every inner
    step (the least-squares estimate); the true residual is recomputed at
    each restart.  Defaults: 6 restart cycles of 10 inner steps, relative
    tolerance 1e-12, zero initial guess.
    """
    cfg = cfg or GmresConfig()
    A = (lambda v: op @ v) if isinstance(op, np.ndarray) else op
    b = np.asarray(rhs, dtype=float)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return SolveReport(np.zeros_like(b), [0.0], 0, True, "gmres", 0, 0.0)

    m = cfg.restart
    history: list[float] = []
    r = b - A(x)
    beta = np.linalg.norm(r)
    history.append(beta / bnorm)
    total_inner = 0
    outer = 0
    converged = beta / bnorm <= cfg.tol
    while not converged and outer < cfg.outer_max:
        outer += 1
        V = np.zeros((m + 1, b.size))
        H = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        V[0] = r / beta
        k_used = 0
        for k in range(m):
            w = A(V[k])
            for i in range(k + 1):  # modified Gram-Schmidt
                H[i, k] = V[i] @ w
                w = w - H[i, k] * V[i]
            H[k + 1, k] = np.linalg.norm(w)
            breakdown = H[k + 1, k] <= 1e-14 * max(1.0, np.abs(H[: k + 1, k]).max())
            if not breakdown:
                V[k + 1] = w / H[k + 1, k]
            for i in range(k):
                t = cs[i] * H[i, k] + sn[i] * H[i + 1, k]
                H[i + 1, k] = -sn[i] * H[i, k] + cs[i] * H[i + 1, k]
                H[i, k] = t
            denom = np.hypot(H[k, k], H[k + 1, k])
            cs[k], sn[k] = H[k, k] / denom, H[k + 1, k] / denom
            H[k, k] = denom
            H[k + 1, k] = 0.0
            g[k + 1] = -sn[k] * g[k]
            g[k] = cs[k] * g[k]
            k_used = k + 1
            total_inner += 1
            history.append(abs(g[k + 1]) / bnorm)
            if abs(g[k + 1]) / bnorm <= cfg.tol or breakdown:
                break
        y = _back_substitute(H[:k_used, :k_used], g[:k_used])
        x = x + V[:k_used].T @ y
        r = b - A(x)
        beta = np.linalg.norm(r)
        history.append(beta / bnorm)
        converged = beta / bnorm <= cfg.tol
        if beta == 0.0:
            break
    return SolveReport(
        solution=x,
        residual_history=[float(v) for v in history],
        outer_iterations=outer,
        converged=bool(converged),
        method="gmres",
        inner_iterations=total_inner,
        final_relative_residual=float(beta / bnorm),
    )


def _back_substitute(R: np.ndarray, g: np.ndarray) -> np.ndarray:
    n = g.size
    y = np.zeros(n)
    for i in range(n - 1, -1, -1):
        y[i] = (g[i] - R[i, i + 1:] @ y[i + 1:]) / R[i, i]
    return y


# -- modified time-reversal iteration ---------------------------------------

def estimate_norm(op: Operator, n: int, steps: int = 30, seed: int = 0,
                  inner=None) -> float:
    """Power iteration estimate of ``||op||`` (op assumed selfadjoint)."""
    inner = inner or (lambda u, v: float(u @ v))
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n)
    v /= np.sqrt(inner(v, v))
    lam = 0.0
    for _ in range(steps):
        w = op(v)
        lam = np.sqrt(inner(w, w))
        if lam == 0.0:
            return 0.0
        v = w / lam
    return float(lam)


def neumann_iterate(
    op: Operator,
    rhs: np.ndarray,
    alpha: float,
    omega: float | str = "auto",
    n_max: int = 200_000,
    tol: float = 1e-12,
    power_steps: int = 30,
    omega_margin: float = 2.2,
    norm: Callable[[np.ndarray], float] | None = None,
    record_every: int = 1,
    slack: float = 1e-10,
) -> SolveReport:
    """Fixed-point iteration for ``(op + alpha) g = rhs``.

    ``op`` must be selfadjoint and non-negative.  With ``omega="auto"`` the
    step is ``omega_margin * (1 + ||op||)`` using a power-iteration norm
    estimate.  Stops when the a-posteriori error bound
    ``q/(1-q) ||g_n - g_{n-1}||`` with ``q = 1 - alpha/omega`` falls below
    ``tol * ||g_n||`` (this implies the plain step criterion).  Per-step
    contraction ratios are recorded; the iteration is aborted as
    misconfigured if the ratio exceeds one for several consecutive steps.
    """
    if alpha <= 0:
        raise SolverSetupError("alpha must be positive")
    norm = norm or (lambda v: float(np.linalg.norm(v)))
    rhs = np.asarray(rhs, dtype=float)
    op_norm = None
    if omega == "auto":
        op_norm = estimate_norm(op, rhs.size, power_steps)
        omega = omega_margin * (1.0 + op_norm)
    omega = float(omega)
    if omega <= 0:
        raise SolverSetupError("omega must be positive")
    q = 1.0 - alpha / omega

    g0 = rhs / omega
    g = g0.copy()
    diffs: list[float] = []
    ratios: list[float] = []
    violations = 0
    bad_run = 0
    converged = False
    n = 0
    prev = None
    for n in range(1, n_max + 1):
        g_new = g0 + (1.0 - alpha / omega) * g - op(g) / omega
        d = norm(g_new - g)
        if prev is not None and prev > 0:
            ratio = d / prev
            if n % record_every == 0:
                ratios.append(ratio)
            if d > q * prev + slack:
                violations += 1
            bad_run = bad_run + 1 if ratio > 1.0 else 0
            if bad_run >= 5:
                raise SolverSetupError(
                    f"iteration expanding (ratio {ratio:.4g}); omega={omega:.4g} too small"
                )
        if n % record_every == 0:
            diffs.append(d)
        prev = d
        g = g_new
        scale = norm(g)
        if d * q / (1.0 - q) <= tol * max(scale, 1e-300) or d == 0.0:
            converged = True
            break
    return SolveReport(
        solution=g,
        residual_history=[float(v) for v in diffs],
        outer_iterations=n,
        converged=converged,
        method="neumann_iteration",
        final_relative_residual=float(prev / max(norm(g), 1e-300)) if prev else 0.0,
        info={
            "omega": omega,
            "op_norm_estimate": op_norm,
            "contraction_bound": q,
            "contraction_violations": violations,
            "max_ratio": float(max(ratios)) if ratios else 0.0,
        },
    )


# -- the two normal equations ---------------------------------------------------

def operator_PKP(ntd: NtdOperator, r: float, symmetrize: bool = False) -> Operator:
    grid = ntd.grid
    K = bo.connecting_K_sym if symmetrize else bo.connecting_K

    def apply(h):
        return bo.project_P(K(ntd, bo.project_P(h, grid, r)), grid, r)

    return apply


def solve_h(
    ntd: NtdOperator,
    r: float,
    alpha: float,
    cfg: RegularizationConfig | None = None,
) -> SolveReport:
    """Solve ``(P K P + alpha) h = -P Phi_T`` for the indicator source."""
    cfg = cfg or RegularizationConfig(alpha=alpha)
    if not alpha > 0:
        raise SolverSetupError("alpha must be positive")
    grid = ntd.grid
    rhs = -bo.project_P(bo.phi_T_discrete(grid), grid, r)
    if cfg.method == "gmres":
        PKP = operator_PKP(ntd, r)
        rep = gmres_restarted(lambda h: PKP(h) + alpha * h, rhs, cfg.gmres)
    else:
        PKP = operator_PKP(ntd, r, symmetrize=cfg.symmetrize)
        nc = cfg.neumann
        rep = neumann_iterate(PKP, rhs, alpha, cfg.omega, nc.n_max, nc.tol,
                              nc.power_steps, nc.omega_margin)
    h = bo.project_P(rep.solution, grid, r)
    rep.solution = h
    norm_sq = float(bo.inner_V(h, h, grid))
    bound = (1.0 + grid.T) ** 2 / alpha
    rep.info.update(
        r=r, alpha=alpha, norm_sq=norm_sq, norm_bound=bound,
        bound_holds=norm_sq <= bound,
        system_relative_residual=_relres(operator_PKP(ntd, r), alpha, h, rhs),
    )
    return rep


def _relres(op: Operator, shift: float, x, b) -> float:
    bn = np.linalg.norm(b)
    return float(np.linalg.norm(op(x) + shift * x - b) / bn) if bn else 0.0


def solve_a(
    ntd: NtdOperator,
    h_alpha: np.ndarray,
    r: float,
    beta: float,
    cfg: RegularizationConfig | None = None,
) -> SolveReport:
    """Solve ``(L + beta) a = -N_Y Q d_t K P h_alpha`` in Y."""
    cfg = cfg or RegularizationConfig(beta=beta)
    if not beta > 0:
        raise SolverSetupError("beta must be positive")
    grid = ntd.grid
    rhs = bo.rhs_a(ntd, h_alpha, r)

    def L(a):
        return bo.operator_L(ntd, a, check=False)

    if cfg.method == "gmres":
        rep = gmres_restarted(lambda a: L(a) + beta * a, rhs, cfg.gmres)
    else:
        nc = cfg.neumann
        rep = neumann_iterate(
            L, rhs, beta, cfg.omega, nc.n_max, nc.tol, nc.power_steps,
            nc.omega_margin, norm=lambda v: float(bo.norm_Y(v, grid)),
        )
    a = bo.project_hat_P(rep.solution, grid)
    rep.solution = a
    rep.info.update(r=r, beta=beta, system_relative_residual=_relres(L, beta, a, rhs))
    return rep


def functional_F1(ntd: NtdOperator, h, alpha: float, r: float) -> float:
    """Tikhonov functional for the indicator problem, *without* the constant
    ``<1_N, 1_N>`` term (not available from boundary data)."""
    grid = ntd.grid
    Ph = bo.project_P(h, grid, r)
    return float(
        2 * bo.inner_V(Ph, bo.phi_T(grid), grid)
        + bo.inner_V(Ph, bo.connecting_K(ntd, Ph), grid)
        + alpha * bo.inner_V(h, h, grid)
    )


def functional_F2(ntd: NtdOperator, a, beta: float, h, r: float) -> float:
    """Boundary expression of the second functional:
    ``<Ph, KPh> + <(L + beta) a + 2 N_Y Q d_t K P h, a>_Y``."""
    grid = ntd.grid
    Ph = bo.project_P(h, grid, r)
    La = bo.operator_L(ntd, a, check=False)
    lin = -bo.rhs_a(ntd, h, r)
    return float(
        bo.inner_V(Ph, bo.connecting_K(ntd, Ph), grid)
        + bo.inner_Y(La + beta * a + 2 * lin, a, grid)
    )
