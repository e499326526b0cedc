"""Spatial grid, discrete operators, and the linearized time stepper.

Each step solves one tridiagonal system for the next level: the unknown
enters through the newest weighted-level surrogate (scalar coefficient
``g_last * (3 - 2*sigma) / (2*tau)``) and through the fitted two-level
average of the diffusion term (``(3/2 - sigma) * sigma / 2`` times the
second difference).  The nonlinear source is evaluated at the previous
level only, so no iteration is ever needed.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve_banded, cholesky_banded

from .coefficients import CoefficientEngine, MultiTermOrders
from .history import HistoryState, VhatSequence

__all__ = [
    "Grid1D",
    "TridiagonalSystem",
    "SolverCounters",
    "SolveResult",
    "delta_x2",
    "build_w",
    "build_w1",
    "thomas_solve",
    "first_step",
    "step_n",
    "run_solver",
]


@dataclass(frozen=True)
class Grid1D:
    """Uniform spatial grid on [x_left, x_right] with M cells."""

    x_left: float
    x_right: float
    M: int

    def __post_init__(self):
        if self.M < 2:
            raise ValueError("need at least two cells")
        if self.x_right <= self.x_left:
            raise ValueError("empty domain")

    @property
    def h(self) -> float:
        return (self.x_right - self.x_left) / self.M

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(self.x_left, self.x_right, self.M + 1)

    @property
    def interior(self) -> np.ndarray:
        return self.nodes[1:-1]


def delta_x2(u: np.ndarray, h: float) -> np.ndarray:
    """Central second difference; boundary slots of the result are zero.

    The denominator is h**2 (dimensional consistency; this is the standard
    second-order operator).
    """
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    out[1:-1] = (u[2:] - 2.0 * u[1:-1] + u[:-2]) / (h * h)
    return out


def build_w(u_n: np.ndarray, u_nm1: np.ndarray, u_nm2: np.ndarray, sigma: float) -> np.ndarray:
    """Fitted two-history combination whose consecutive average hits t_n."""
    return ((1.5 - sigma) * (sigma * u_n + (1 - sigma) * u_nm1)
            + (sigma - 0.5) * (sigma * u_nm1 + (1 - sigma) * u_nm2))


def build_w1(u_1: np.ndarray, u_0: np.ndarray, psi: np.ndarray, tau: float, sigma: float) -> np.ndarray:
    """First-level variant: the missing back level is u_1 - 2*tau*psi."""
    return ((1.5 - sigma) * (sigma * u_1 + (1 - sigma) * u_0)
            + (sigma - 0.5) * (sigma * u_0 + (1 - sigma) * (u_1 - 2.0 * tau * psi)))


@dataclass
class TridiagonalSystem:
    """Interior-point system; strictly diagonally dominant by construction."""

    sub: np.ndarray
    diag: np.ndarray
    sup: np.ndarray
    rhs: np.ndarray

    def dominance_margin(self) -> float:
        pad_sub = np.concatenate(([0.0], self.sub))
        pad_sup = np.concatenate((self.sup, [0.0]))
        return float(np.min(np.abs(self.diag) - np.abs(pad_sub) - np.abs(pad_sup)))


def thomas_solve(sys: TridiagonalSystem) -> np.ndarray:
    """Elimination without pivoting in O(M); requires diagonal dominance."""
    if sys.dominance_margin() <= 0:
        raise ValueError("system is not strictly diagonally dominant")
    n = sys.diag.size
    cp = np.empty(n - 1) if n > 1 else np.empty(0)
    dp = np.empty(n)
    denom = sys.diag[0]
    dp[0] = sys.rhs[0] / denom
    if n > 1:
        cp[0] = sys.sup[0] / denom
    for i in range(1, n):
        denom = sys.diag[i] - sys.sub[i - 1] * cp[i - 1]
        if i < n - 1:
            cp[i] = sys.sup[i] / denom
        dp[i] = (sys.rhs[i] - sys.sub[i - 1] * dp[i - 1]) / denom
    x = np.empty(n)
    x[-1] = dp[-1]
    for i in range(n - 2, -1, -1):
        x[i] = dp[i] - cp[i] * x[i + 1]
    return x


class _ConstantTridiagonal:
    """Factor the constant step matrix once; solve per step at C speed.

    The matrix (c1 + 2*c2/h**2) I - (c2/h**2) shift is symmetric positive
    definite, so a banded Cholesky factorization is reused for every step.
    """

    def __init__(self, c_diag: float, c_off: float, m_interior: int):
        ab = np.zeros((2, m_interior))
        ab[0, 1:] = c_off
        ab[1, :] = c_diag
        self._factor = cholesky_banded(ab, lower=False)
        self.c_diag = c_diag
        self.c_off = c_off

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return cho_solve_banded((self._factor, False), rhs)


@dataclass
class SolverCounters:
    """Deterministic work and memory proxies plus wall time."""

    kernel_multiplies: int = 0
    stored_reals: int = 0
    wall_time: float = 0.0
    n_exp_total: int = 0


@dataclass
class SolveResult:
    u_final: np.ndarray
    sigma: float
    tau: float
    h: float
    counters: SolverCounters
    err_l2_max: float | None = None
    err_semi_max: float | None = None
    err_h1_max: float | None = None
    trajectory: list = field(default_factory=list)


class _SchemeRun:
    """Internal stepping context shared by first_step / step_n."""

    def __init__(self, problem, engine: CoefficientEngine, grid: Grid1D, N: int):
        self.problem = problem
        self.engine = engine
        self.grid = grid
        self.N = N
        self.tau = problem.t_final / N
        self.sigma = engine.sigma
        self.h = grid.h
        x = grid.nodes
        self.x_int = x[1:-1]
        self.u_prev = np.zeros(grid.M + 1)      # u^{n-1}
        self.u_curr = np.zeros(grid.M + 1)      # u^n
        self.u_prev2 = np.zeros(grid.M + 1)     # u^{n-2}
        self.phi = np.zeros(grid.M + 1)
        self.psi = np.zeros(grid.M + 1)
        self.phi[:] = problem.phi(x)
        self.psi[:] = problem.psi(x)
        self.vhat_prev: np.ndarray | None = None
        self.delta0: np.ndarray | None = None
        self.n = 0
        c2 = (1.5 - self.sigma) * self.sigma / 2.0
        c1 = engine.g_last * (3.0 - 2.0 * self.sigma) / (2.0 * self.tau)
        self.c1, self.c2 = c1, c2
        self._lin = _ConstantTridiagonal(c1 + 2.0 * c2 / self.h**2,
                                         -c2 / self.h**2, grid.M - 1)
        self.fast = engine.mode == "fast"
        if self.fast:
            self.hist = HistoryState(engine, grid.M - 1)
        else:
            self.seq = VhatSequence(grid.M - 1, N + 1, self.psi[1:-1])

    # -- data-term second derivatives ----------------------------------------

    def _data_xx(self) -> np.ndarray:
        p = self.problem
        if p.phi_xx is not None and p.psi_xx is not None:
            return (np.asarray(p.phi_xx(self.grid.nodes), dtype=float)
                    + self.sigma * self.tau * np.asarray(p.psi_xx(self.grid.nodes), dtype=float))
        return delta_x2(self.phi, self.h) + self.sigma * self.tau * delta_x2(self.psi, self.h)


def first_step(run: _SchemeRun) -> None:
    """Explicit first level: the single unknown occurrence is inverted."""
    p = run.problem
    tau, sigma = run.tau, run.sigma
    t_sigma = sigma * tau
    g0_level1 = run.engine.a0_agg / (1.0 - sigma)
    rhs = (run._data_xx()[1:-1]
           + p.f(run.phi[1:-1] + t_sigma * run.psi[1:-1])
           + p.p(run.x_int, t_sigma))
    u1 = np.zeros_like(run.phi)
    u1[1:-1] = (run.phi[1:-1] + tau * run.psi[1:-1]
                + tau * rhs / ((2.0 - 2.0 * sigma) * g0_level1))
    run.u_prev = run.phi.copy()
    run.u_curr = u1
    run.vhat_prev = ((2 - 2 * sigma) * (u1 - run.u_prev) / tau
                     + (2 * sigma - 1) * run.psi)
    run.delta0 = run.vhat_prev - run.psi
    if not run.fast:
        run.seq.append(run.vhat_prev[1:-1])
    run.n = 1


def step_n(run: _SchemeRun, counters: SolverCounters) -> None:
    """Advance one implicit step: assemble, solve, update the history."""
    n = run.n
    if n < 1:
        raise RuntimeError("step_n before first_step")
    engine, tau, sigma, h = run.engine, run.tau, run.sigma, run.h
    mi = run.grid.M - 1
    g0_eff, bn, g0r, btil = engine.step_scalars(n)

    if n == 1:
        w_n = build_w1(run.u_curr, run.u_prev, run.psi, tau, sigma)
    else:
        w_n = build_w(run.u_curr, run.u_prev, run.u_prev2, sigma)
    w_next_known = ((1.5 - sigma) * (1 - sigma) * run.u_curr
                    + (sigma - 0.5) * (sigma * run.u_curr + (1 - sigma) * run.u_prev))
    vhat_next_known = (-(2 - 2 * sigma) * run.u_curr / tau
                       - (2 * sigma - 1) * run.u_prev / (2 * tau))

    if n == 1:
        known_mem = g0_eff * run.delta0[1:-1]
        counters.kernel_multiplies += 2 * mi
    elif run.fast:
        known_mem = run.hist.begin_step(engine, run.hist.dv_prev)
        counters.kernel_multiplies += run.hist.n_nodes * mi
    else:
        weights = engine.interior_weights_view(n)
        known_mem = g0_eff * run.delta0[1:-1] + weights @ run.seq.increments[1:n]
        counters.kernel_multiplies += (n + 1) * mi

    known_hist = known_mem + engine.g_last * (vhat_next_known - run.vhat_prev)[1:-1]

    t_n = n * tau
    rhs = (delta_x2(0.5 * (w_next_known + w_n), h)[1:-1]
           + run.problem.f(run.u_curr[1:-1])
           + run.problem.p(run.x_int, t_n)
           - known_hist)

    u_next = np.zeros(run.grid.M + 1)
    u_next[1:-1] = run._lin.solve(rhs)

    vhat_next = ((2 - 2 * sigma) * (u_next - run.u_curr) / tau
                 + (2 * sigma - 1) * (u_next - run.u_prev) / (2 * tau))
    dv_next = (vhat_next - run.vhat_prev)[1:-1]

    if run.fast:
        if n == 1:
            psi_i = run.psi[1:-1]
            v1 = (run.vhat_prev[1:-1] - sigma * psi_i) / (1 - sigma)
            v2 = (vhat_next[1:-1] - sigma * v1) / (1 - sigma)
            run.hist.seed(engine, psi_i, v1, v2)
            run.hist.dv_prev = dv_next
        else:
            run.hist.complete_step(engine, dv_next)
    else:
        run.seq.append(vhat_next[1:-1])

    run.u_prev2, run.u_prev, run.u_curr = run.u_prev, run.u_curr, u_next
    run.vhat_prev = vhat_next
    run.n = n + 1


def run_solver(problem, M: int, N: int, backend: str = "fast", eps=None,
               validation: str = "warn", keep_trajectory: bool = False,
               shared_soes=None, error_norms=None) -> SolveResult:
    """Run the full scheme on an (M, N) grid.

    Parameters
    ----------
    problem : ProblemSpec
        Data functions and (optionally) the exact solution.
    M, N : int
        Space cells and time steps; tau = t_final / N.
    backend : "fast" | "direct"
        Compressed-history recursion or exact stored-history summation.
    eps : sequence or float, optional
        Per-order kernel tolerance (fast backend only).
    validation : "warn" | "strict" | "off"
        Policy for the runtime coefficient inequality checks.
    keep_trajectory : bool
        Retain every level (memory-hungry; off by default so the fast
        backend's footprint stays honest).
    shared_soes : list of SOEApprox, optional
        Reuse prebuilt kernel compressions (their certified interval must
        cover [sigma*tau, t_final]).
    error_norms : callable, optional
        ``error_norms(u_full, h) -> (l2, semi, h1)`` used for the online
        error maxima when the problem has an exact solution.

    Returns
    -------
    SolveResult
        Final level, counters, and (if exact is available) the running
        maxima of the error norms over all levels 0..N.
    """
    if backend not in ("fast", "direct"):
        raise ValueError(f"unknown backend {backend!r}")
    if N < 1:
        raise ValueError("need at least one time step")
    t0 = time.perf_counter()
    grid = Grid1D(problem.domain[0], problem.domain[1], M)
    tau = problem.t_final / N
    engine = CoefficientEngine(problem.orders, tau, mode=backend, eps=eps,
                               t_final=problem.t_final, n_cap=N,
                               validation=validation, shared_soes=shared_soes)
    sigma = engine.sigma
    if backend == "fast":
        t_f = problem.t_final
        if tau >= min(sigma, max(sigma**2, t_f * sigma**2)):
            warnings.warn(
                f"tau={tau} violates tau < min(sigma, max(sigma^2, T*sigma^2)); "
                "the kernel compression bound is not guaranteed", RuntimeWarning)

    run = _SchemeRun(problem, engine, grid, N)
    counters = SolverCounters(n_exp_total=engine.n_exp_total)

    if error_norms is None:
        from .analysis import norms as _norms

        def error_norms(u_full, h):
            t = _norms(u_full, h)
            return t.l2, t.semi_h1, t.h1

    have_exact = problem.exact is not None
    e_l2 = e_semi = e_h1 = 0.0

    def track(u_full, t):
        nonlocal e_l2, e_semi, e_h1
        if have_exact:
            diff = u_full - problem.exact(grid.nodes, t)
            l2, semi, h1 = error_norms(diff, grid.h)
            e_l2 = max(e_l2, l2)
            e_semi = max(e_semi, semi)
            e_h1 = max(e_h1, h1)
        if keep_trajectory:
            run_trajectory.append(u_full.copy())

    run_trajectory: list = []
    track(run.phi, 0.0)

    first_step(run)
    track(run.u_curr, tau)
    for _ in range(1, N):
        step_n(run, counters)
        track(run.u_curr, run.n * tau)

    base_reals = 7 * (grid.M + 1)  # live solution / data / surrogate levels
    backend_reals = run.hist.stored_reals if run.fast else run.seq.stored_reals
    counters.stored_reals = base_reals + backend_reals
    counters.wall_time = time.perf_counter() - t0
    return SolveResult(
        u_final=run.u_curr,
        sigma=sigma,
        tau=tau,
        h=grid.h,
        counters=counters,
        err_l2_max=e_l2 if have_exact else None,
        err_semi_max=e_semi if have_exact else None,
        err_h1_max=e_h1 if have_exact else None,
        trajectory=run_trajectory,
    )
