"""History bookkeeping for both solver backends.

The fast backend compresses the whole tail of the time history into one
auxiliary grid function per exponential node, updated by a one-multiply
recursion each step.  The direct backend stores the sequence of weighted
level surrogates and re-sums them with exact weights every step; it is the
O(M*N) memory / O(M*N^2) work baseline the fast backend is measured
against, and doubles as the equivalence oracle for the recursion.
"""

from __future__ import annotations

import numpy as np

from .coefficients import CoefficientEngine

__all__ = [
    "HistoryState",
    "VhatSequence",
    "seed_history",
    "advance_history",
    "history_known_part",
    "direct_history_apply",
]


class HistoryState:
    """Compressed history: one interior grid function per (order, node).

    Memory is (M-1) * total node count reals plus O(nodes) scalars,
    independent of the step index.  All-zero before the first seed.
    """

    def __init__(self, engine: CoefficientEngine, m_interior: int):
        engine._require_fast()
        self.n_nodes = engine.x_flat.size
        self.m_interior = m_interior
        self.V = np.zeros((self.n_nodes, m_interior))
        self.dv_prev: np.ndarray | None = None
        self.seeded = False
        self._partial: np.ndarray | None = None
        self._buf = np.empty_like(self.V)

    @property
    def stored_reals(self) -> int:
        """Live reals held by the compressed state (buffers included)."""
        total = self.V.size + self._buf.size + self.n_nodes  # decay cache
        if self.dv_prev is not None:
            total += self.dv_prev.size
        return total

    def seed(self, engine: CoefficientEngine, v0, v1, v2) -> None:
        v0 = np.asarray(v0, dtype=float)
        v1 = np.asarray(v1, dtype=float)
        v2 = np.asarray(v2, dtype=float)
        if not v0.shape == v1.shape == v2.shape == (self.m_interior,):
            raise ValueError("seed grid functions must all have the interior length")
        one_ms = 1.0 - engine.sigma
        self.V = one_ms * (engine.A_flat[:, None] * (v1 - v0)[None, :]
                           + engine.B_flat[:, None] * (v2 - v1)[None, :])
        self.seeded = True

    def begin_step(self, engine: CoefficientEngine, dv_prev: np.ndarray) -> np.ndarray:
        """Decay the state, absorb the previous increment, and return the
        weighted sum over nodes (the memory part of the operator)."""
        if not self.seeded:
            raise RuntimeError("history used before seeding")
        np.multiply(self.V, engine.decay[:, None], out=self._buf)
        self._buf += engine.A_flat[:, None] * dv_prev[None, :]
        self._partial = self._buf
        return engine.wl @ self._buf

    def complete_step(self, engine: CoefficientEngine, dv_next: np.ndarray) -> None:
        if self._partial is None:
            raise RuntimeError("complete_step without begin_step")
        self._partial += engine.B_flat[:, None] * dv_next[None, :]
        self.V, self._buf = self._partial, self.V
        self._partial = None
        self.dv_prev = dv_next

    def weighted_sum(self, engine: CoefficientEngine) -> np.ndarray:
        """sum_(r,j) lam_r what_j V[r,j,:] over the current state."""
        return engine.wl @ self.V


class VhatSequence:
    """Stored weighted-level surrogates (direct backend).

    Keeps every v-hat level plus the running increments; growth is linear
    in the step count, which is exactly the memory baseline the compressed
    state avoids.
    """

    def __init__(self, m_interior: int, n_cap: int, psi: np.ndarray):
        psi = np.asarray(psi, dtype=float)
        if psi.shape != (m_interior,):
            raise ValueError("psi must be an interior grid function")
        self.m_interior = m_interior
        self.psi = psi
        self.values = np.zeros((n_cap + 1, m_interior))
        self.increments = np.zeros((n_cap + 1, m_interior))
        self.count = 0
        self.delta0: np.ndarray | None = None

    @property
    def stored_reals(self) -> int:
        return (2 * self.count + 1) * self.m_interior

    def append(self, vhat: np.ndarray) -> None:
        k = self.count
        if k >= self.values.shape[0]:
            raise ValueError("sequence capacity exceeded")
        self.values[k] = vhat
        if k == 0:
            self.delta0 = vhat - self.psi
        else:
            self.increments[k] = vhat - self.values[k - 1]
        self.count += 1

    def vhat(self, k: int) -> np.ndarray:
        if k >= self.count:
            raise ValueError(f"level {k} not available (have {self.count})")
        return self.values[k]


def seed_history(state: HistoryState, engine: CoefficientEngine, v0, v1, v2) -> HistoryState:
    """Initialize the compressed state from the reduced-variable levels 0..2."""
    state.seed(engine, v0, v1, v2)
    return state


def advance_history(state: HistoryState, engine: CoefficientEngine,
                    dv_prev: np.ndarray, dv_next: np.ndarray) -> HistoryState:
    """One recursion step: V <- decay*V + A*dv_prev + B*dv_next per node."""
    state.begin_step(engine, dv_prev)
    state.complete_step(engine, dv_next)
    return state


def history_known_part(state: HistoryState, engine: CoefficientEngine) -> np.ndarray:
    """Memory part of the step operator, excluding the unknown increment.

    Requires the state advanced through the previous step; the returned
    grid function is sum_(r,j) lam*what*(decay*V + A*dv_prev).  The caller
    closes the operator by adding the constant row tail ``engine.g_last``
    times the newest weighted-level increment, whose unknown-level scalar
    coefficient is ``engine.g_last * (3 - 2*sigma) / (2*tau)``.
    """
    if state.dv_prev is None:
        raise RuntimeError("history_known_part before any advance")
    return state.begin_step(engine, state.dv_prev)


def direct_history_apply(seq: VhatSequence, engine: CoefficientEngine, n: int) -> np.ndarray:
    """Exact weighted summation form of the step-n operator.

    Needs all levels through index n (that is, the surrogate built from the
    just-computed solution level).  The first increment is taken against
    the regrouped pseudo-level, so this matches the recursion-based
    operator identically up to roundoff whichever mode the engine is in.
    """
    if seq.count < n + 1:
        raise ValueError(f"need {n + 1} stored levels, have {seq.count}")
    row, b_tilde = engine.refined_g_row(n)
    # vhat^{-sigma} = b_tilde*(vhat^{1-sigma} - psi) + psi
    out = row[0] * (1.0 - b_tilde) * seq.delta0
    if n >= 1:
        out = out + row[1: n + 1] @ seq.increments[1: n + 1]
    return out
