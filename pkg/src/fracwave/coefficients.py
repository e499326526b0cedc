"""Offset solve and discrete coefficients for the weighted fractional scheme.

Everything the time stepper needs per step is produced here: the offset
``sigma`` (root of the moment-cancellation equation), the exact
second-order history weights of each reduced order ``beta = alpha - 1``,
their multi-term combinations, the exponential-sum surrogates used by the
fast backend, and the refined weights obtained after regrouping the first
history increment.

Index conventions follow the discretization: at step ``n`` (computing the
level ``n+1`` unknown) the weight row has entries ``k = 0..n``; row entry
``k`` multiplies the increment between the ``k+1-sigma`` and ``k-sigma``
weighted levels.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .soe import SOEApprox, build_soe

__all__ = [
    "MultiTermOrders",
    "SigmaValue",
    "CoefficientEngine",
    "CoefficientValidationError",
    "solve_sigma",
]

# Switch to the Taylor series of the bracketed terms in A/B below this x;
# the closed form loses ~2*log10(1/x) digits to cancellation.
_AB_SERIES_SWITCH = 1e-2


class CoefficientValidationError(RuntimeError):
    """A coefficient inequality required by the stability theory failed."""


@dataclass(frozen=True)
class MultiTermOrders:
    """Fractional orders and positive weights of the multi-term operator.

    ``terms`` is an ordered list of (alpha, lam) with strictly decreasing
    alphas in (1, 2) and positive lams.
    """

    terms: tuple

    def __post_init__(self):
        alphas = [a for a, _ in self.terms]
        lams = [l for _, l in self.terms]
        if not alphas:
            raise ValueError("at least one fractional order is required")
        if any(not 1.0 < a < 2.0 for a in alphas):
            raise ValueError(f"orders must lie in (1,2): {alphas}")
        if any(a2 >= a1 for a1, a2 in zip(alphas, alphas[1:])):
            raise ValueError(f"orders must be strictly decreasing: {alphas}")
        if any(l <= 0 for l in lams):
            raise ValueError(f"weights must be positive: {lams}")

    @classmethod
    def from_pairs(cls, pairs) -> "MultiTermOrders":
        return cls(tuple((float(a), float(l)) for a, l in pairs))

    @property
    def alphas(self) -> np.ndarray:
        return np.array([a for a, _ in self.terms])

    @property
    def lams(self) -> np.ndarray:
        return np.array([l for _, l in self.terms])

    @property
    def betas(self) -> np.ndarray:
        return self.alphas - 1.0

    @property
    def m(self) -> int:
        return len(self.terms) - 1


@dataclass(frozen=True)
class SigmaValue:
    """Root of the offset equation together with its admissible bracket."""

    sigma: float
    bracket_lo: float
    bracket_hi: float
    residual: float

    def __post_init__(self):
        if not self.bracket_lo - 1e-15 <= self.sigma <= self.bracket_hi + 1e-15:
            raise ValueError("sigma outside its bracket")


def _sigma_F(orders: MultiTermOrders, tau: float, s: float) -> float:
    total = 0.0
    for b, l in zip(orders.betas, orders.lams):
        total += (l * s ** (1.0 - b) / math.gamma(3.0 - b)
                  * (s - (1.0 - b / 2.0)) * tau ** (2.0 - b))
    return total


def _sigma_dF(orders: MultiTermOrders, tau: float, s: float) -> float:
    total = 0.0
    for b, l in zip(orders.betas, orders.lams):
        c = l * tau ** (2.0 - b) / math.gamma(3.0 - b)
        total += c * ((1.0 - b) * s ** (-b) * (s - (1.0 - b / 2.0)) + s ** (1.0 - b))
    return total


def _sigma_scale(orders: MultiTermOrders, tau: float, s: float) -> float:
    # magnitude of the individual terms, for a relative residual criterion
    total = 0.0
    for b, l in zip(orders.betas, orders.lams):
        total += abs(l * s ** (1.0 - b) / math.gamma(3.0 - b)) * tau ** (2.0 - b)
    return max(total, 1e-300)


def solve_sigma(orders: MultiTermOrders, tau: float, tol: float = 1e-14) -> SigmaValue:
    """Solve the moment-cancellation equation for the offset sigma.

    The root lies in [1 - beta_0/2, 1 - beta_m/2]; a single order collapses
    the bracket and the closed form sigma = 1 - beta/2 is returned.  Newton
    from the bracket midpoint with bisection safeguarding; converges to
    |F| <= tol * (scale of the F terms).
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    betas = orders.betas
    lo = 1.0 - betas[0] / 2.0
    hi = 1.0 - betas[-1] / 2.0
    if hi - lo < 1e-14:
        return SigmaValue(sigma=lo, bracket_lo=lo, bracket_hi=hi,
                          residual=_sigma_F(orders, tau, lo))

    f_lo = _sigma_F(orders, tau, lo)
    f_hi = _sigma_F(orders, tau, hi)
    if f_lo > 0 or f_hi < 0:
        raise RuntimeError("offset equation lost its sign change; invalid orders")

    a, b = lo, hi
    s = 0.5 * (lo + hi)
    for _ in range(200):
        fs = _sigma_F(orders, tau, s)
        if abs(fs) <= tol * _sigma_scale(orders, tau, s):
            break
        if fs < 0:
            a = s
        else:
            b = s
        dfs = _sigma_dF(orders, tau, s)
        step = s - fs / dfs if dfs != 0 else None
        s = step if step is not None and a < step < b else 0.5 * (a + b)
    return SigmaValue(sigma=s, bracket_lo=lo, bracket_hi=hi,
                      residual=_sigma_F(orders, tau, s))


def _ab_pairs(x: np.ndarray, sigma: float):
    """Current-panel moments A(x), B(x) for exponent steps x = s_j * tau.

    A = exp(-x*sigma) * (E1/2 + E2), B = exp(-x*sigma) * (E1/2 - E2) with
    E1 = (1-exp(-x))/x and E2 = (1-(1+x)exp(-x))/x**2, evaluated by series
    below the cancellation switch.
    """
    x = np.asarray(x, dtype=float)
    A = np.empty_like(x)
    B = np.empty_like(x)
    small = x <= _AB_SERIES_SWITCH
    xs = x[small]
    e1 = 1 - xs / 2 + xs**2 / 6 - xs**3 / 24 + xs**4 / 120 - xs**5 / 720
    e2 = 0.5 - xs / 3 + xs**2 / 8 - xs**3 / 30 + xs**4 / 144 - xs**5 / 840
    damp = np.exp(-xs * sigma)
    A[small] = damp * (e1 / 2 + e2)
    B[small] = damp * (e1 / 2 - e2)
    xl = x[~small]
    e1 = (1 - np.exp(-xl)) / xl
    e2 = (1 - (1 + xl) * np.exp(-xl)) / xl**2
    damp = np.exp(-xl * sigma)
    A[~small] = damp * (e1 / 2 + e2)
    B[~small] = damp * (e1 / 2 - e2)
    return A, B


class CoefficientEngine:
    """All per-step scalar coefficients for a fixed (orders, sigma, tau).

    Two backends share one interface.  ``mode="direct"`` evaluates the
    exact closed-form weights, extending per-order arrays by one entry per
    step.  ``mode="fast"`` compresses the history kernel of each order
    into an exponential sum; its first-weight and shift scalars decay by
    one multiply per node per step.

    One engine belongs to one solver run (step advancement mutates the
    decaying accumulators); engines of distinct runs are independent.
    """

    def __init__(self, orders: MultiTermOrders, tau: float, mode: str = "direct",
                 eps=None, t_final: float = 1.0, n_cap: int | None = None,
                 validation: str = "warn", shared_soes=None):
        if mode not in ("direct", "fast"):
            raise ValueError(f"unknown mode {mode!r}")
        if validation not in ("warn", "strict", "off"):
            raise ValueError(f"unknown validation policy {validation!r}")
        self.orders = orders
        self.tau = float(tau)
        self.mode = mode
        self.validation = validation
        self.sigma_value = solve_sigma(orders, tau)
        self.sigma = self.sigma_value.sigma

        betas = orders.betas
        lams = orders.lams
        self.mus = tau ** (-betas) / np.array([math.gamma(2 - b) for b in betas])
        self.lam_mu = lams * self.mus
        # a0_agg: sum_r lam_r * mu_r * a0_r, the k = n weight's current part
        self.a0_agg = float(np.sum(self.lam_mu * self.sigma ** (1 - betas)))

        # direct closed-form tables, extended lazily (used by the direct
        # backend and by coefficient diagnostics in either mode)
        cap = (n_cap + 4) if n_cap is not None else 256
        self._cap = cap
        self._a = np.zeros((len(betas), cap))
        self._b = np.zeros((len(betas), cap + 1))
        self._a[:, 0] = self.sigma ** (1 - betas)
        self._filled = 0
        # reversed interior-weight buffer: _dbuf[cap - l] = ghat weight for
        # shift l, so the slice for one step is contiguous and ascending
        self._dbuf = np.zeros(cap + 1)
        self._d_filled = 0

        self.soes: list[SOEApprox] | None = None
        if mode == "fast":
            tau_hat = self.sigma * tau
            if eps is None:
                raise ValueError("fast mode requires per-order eps")
            self.eps = [float(e) for e in np.broadcast_to(eps, betas.shape)]
            if shared_soes is not None:
                self.soes = list(shared_soes)
                if len(self.soes) != len(betas):
                    raise ValueError("shared_soes must supply one SOE per order")
            else:
                self.soes = [build_soe(b, e, tau_hat, t_final)
                             for b, e in zip(betas, self.eps)]
            parts_s, parts_w, parts_l = [], [], []
            for soe, b, l in zip(self.soes, betas, lams):
                parts_s.append(soe.nodes)
                parts_w.append(soe.weights / math.gamma(1 - b))
                parts_l.append(np.full(soe.n_exp, l))
            self.s_flat = np.concatenate(parts_s)
            self.what_flat = np.concatenate(parts_w)
            self.lam_flat = np.concatenate(parts_l)
            self.x_flat = self.s_flat * tau
            self.decay = np.exp(-self.x_flat)
            self.A_flat, self.B_flat = _ab_pairs(self.x_flat, self.sigma)
            self.wl = self.lam_flat * self.what_flat
            # decaying accumulator exp(-(n-1)*x), positioned at n = 1
            self._dec_pow = np.ones_like(self.x_flat)
            self._dec_n = 1
            self._wlA = self.wl * self.A_flat
            self._wlB = self.wl * self.B_flat
            self._wlA_sum = float(np.sum(self._wlA))
            self._wlB_sum = float(np.sum(self._wlB))

        self._g_last = self._compute_g_last()
        self._g_prev_last = self._compute_g_prev_last()
        self._sign_checked = False

    # -- closed-form tables -------------------------------------------------

    def _grow(self, cap: int) -> None:
        grow_a = np.zeros((self._a.shape[0], cap))
        grow_a[:, : self._a.shape[1]] = self._a
        grow_b = np.zeros((self._b.shape[0], cap + 1))
        grow_b[:, : self._b.shape[1]] = self._b
        # re-anchor the reversed buffer: old _dbuf[old_cap - l] -> new[cap - l]
        grow_d = np.zeros(cap + 1)
        if self._d_filled:
            grow_d[cap - self._d_filled: cap] = \
                self._dbuf[self._cap - self._d_filled: self._cap]
        self._a, self._b, self._dbuf, self._cap = grow_a, grow_b, grow_d, cap

    def _ensure(self, l_max: int) -> None:
        """Extend a_l, b_l (and the combined interior weights) through l_max."""
        if l_max + 1 >= self._cap:
            self._grow(max(2 * self._cap, l_max + 8))
        sigma = self.sigma
        betas = self.orders.betas
        while self._filled < l_max:
            l = self._filled + 1
            for r, b in enumerate(betas):
                self._a[r, l] = (l + sigma) ** (1 - b) - (l - 1 + sigma) ** (1 - b)
                self._b[r, l] = (((l + sigma) ** (2 - b) - (l - 1 + sigma) ** (2 - b)) / (2 - b)
                                 - ((l + sigma) ** (1 - b) + (l - 1 + sigma) ** (1 - b)) / 2)
            self._filled = l
        # combined interior weight for shift l needs b_{l+1}, so it trails
        # the raw tables by one entry
        while self._d_filled < self._filled - 1:
            l = self._d_filled + 1
            self._dbuf[self._cap - l] = float(np.sum(
                self.lam_mu * (self._a[:, l] + self._b[:, l + 1] - self._b[:, l])))
            self._d_filled = l

    # -- spec operations ----------------------------------------------------

    def direct_g_row(self, r: int, n: int) -> np.ndarray:
        """Exact weight row of order index ``r`` at step ``n`` (k = 0..n)."""
        if n < 0:
            raise ValueError("n must be >= 0")
        sigma, tau = self.sigma, self.tau
        b = self.orders.betas[r]
        mu = self.mus[r]
        if n == 0:
            return np.array([mu * sigma ** (1 - b)])
        self._ensure(n + 1)
        a_r = self._a[r]
        b_r = self._b[r]
        row = np.empty(n + 1)
        row[0] = a_r[n] - b_r[n]
        ks = np.arange(1, n)
        row[1:n] = a_r[n - ks] + b_r[n - ks + 1] - b_r[n - ks]
        row[n] = a_r[0] + b_r[1]
        return mu * row

    def multiterm_direct_row(self, n: int) -> np.ndarray:
        """Exact multi-term weight row: lambda-weighted sum over orders."""
        lams = self.orders.lams
        out = lams[0] * self.direct_g_row(0, n)
        for r in range(1, len(lams)):
            out += lams[r] * self.direct_g_row(r, n)
        return out

    def fast_AB(self):
        """(A_j, B_j) per flattened (order, node); fast mode only."""
        self._require_fast()
        return self.A_flat, self.B_flat

    def fast_g_row(self, n: int) -> np.ndarray:
        """Exponential-sum weight row at step ``n`` (k = 0..n); fast mode only."""
        self._require_fast()
        if n < 0:
            raise ValueError("n must be >= 0")
        if n == 0:
            return np.array([self.a0_agg])
        out = np.empty(n + 1)
        x = self.x_flat
        out[0] = float(np.sum(self._wlA * np.exp(-(n - 1) * x)))
        for k in range(1, n):
            out[k] = float(np.sum(self._wlA * np.exp(-(n - k - 1) * x)
                                  + self._wlB * np.exp(-(n - k) * x)))
        out[n] = self._wlB_sum + self.a0_agg
        return out

    def bn_value(self, n: int) -> float:
        """Shift-defect scalar b_n = sum lam * what * exp(-(n-1)x) * B."""
        if n < 1:
            raise ValueError("n must be >= 1")
        if self.mode == "fast":
            if n == self._dec_n:
                return float(np.sum(self._wlB * self._dec_pow))
            return float(np.sum(self._wlB * np.exp(-(n - 1) * self.x_flat)))
        self._ensure(n)
        return float(np.sum(self.lam_mu * self._b[:, n]))

    def refined_g_row(self, n: int):
        """Refined row and b-tilde: the k = 0 weight absorbs half of b_n.

        Returns ``(row, b_tilde)``.  For n = 0 the single first-level weight
        is the aggregated current-part weight divided by (1 - sigma).
        """
        if n == 0:
            return np.array([self.a0_agg / (1.0 - self.sigma)]), 0.0
        row = self.fast_g_row(n) if self.mode == "fast" else self.multiterm_direct_row(n)
        bn = self.bn_value(n)
        row = row.copy()
        row[0] -= 0.5 * bn
        b_tilde = (3 * self.sigma - 1) * bn / (2 * (1 - self.sigma) * row[0])
        self._validate_row(n, row, bn)
        return row, b_tilde

    # -- hot-path scalars (constant or O(nodes) per step) --------------------

    @property
    def g_last(self) -> float:
        """Row entry k = n, the unknown level's weight; constant in n."""
        return self._g_last

    def _compute_g_last(self) -> float:
        if self.mode == "fast":
            return self._wlB_sum + self.a0_agg
        self._ensure(1)
        return float(np.sum(self.lam_mu * (self._a[:, 0] + self._b[:, 1])))

    def _compute_g_prev_last(self) -> float:
        # row entry k = n-1 for n >= 2; also constant in n
        if self.mode == "fast":
            return float(np.sum(self._wlA + self._wlB * self.decay))
        self._ensure(2)
        return float(np.sum(self.lam_mu * (self._a[:, 1] + self._b[:, 2] - self._b[:, 1])))

    def advance_to(self, n: int) -> None:
        """Position the decaying accumulators / tables at step ``n``."""
        if self.mode == "fast":
            if n < self._dec_n:
                self._dec_pow = np.exp(-(n - 1) * self.x_flat)
                self._dec_n = n
            while self._dec_n < n:
                self._dec_pow = self._dec_pow * self.decay
                self._dec_n += 1
        else:
            self._ensure(n + 1)

    def step_scalars(self, n: int):
        """(g0_eff, bn, g0_refined, b_tilde) for the step-n operator.

        ``g0_eff = ghat_0 - sigma/(1-sigma) * b_n`` multiplies the first
        weighted-level increment; it equals the refined k = 0 weight acting
        on the regrouped pseudo-level difference.
        """
        self.advance_to(n)
        if self.mode == "fast":
            ghat0 = float(np.sum(self._wlA * self._dec_pow))
            bn = float(np.sum(self._wlB * self._dec_pow))
        else:
            ghat0 = float(np.sum(self.lam_mu * (self._a[:, n] - self._b[:, n])))
            bn = float(np.sum(self.lam_mu * self._b[:, n]))
        g0_refined = ghat0 - 0.5 * bn
        g0_eff = ghat0 - self.sigma / (1 - self.sigma) * bn
        b_tilde = (3 * self.sigma - 1) * bn / (2 * (1 - self.sigma) * g0_refined)
        self._validate_scalars(n, g0_refined, bn)
        return g0_eff, bn, g0_refined, b_tilde

    def interior_weights_view(self, n: int) -> np.ndarray:
        """Refined weights for k = 1..n-1 at step ``n`` (direct mode).

        Contiguous ascending-k view into the reversed buffer; entry ``k-1``
        is the weight pairing with the k-th stored level increment.
        """
        if self.mode != "direct":
            raise RuntimeError("interior weights are a direct-mode facility")
        self._ensure(n + 1)
        return self._dbuf[self._cap - (n - 1): self._cap]

    # -- validation -----------------------------------------------------------

    def _report(self, message: str) -> None:
        if self.validation == "strict":
            raise CoefficientValidationError(message)
        if self.validation == "warn":
            warnings.warn(message, RuntimeWarning, stacklevel=3)

    def _validate_scalars(self, n: int, g0_refined: float, bn: float) -> None:
        if self.validation == "off":
            return
        if g0_refined <= 0:
            self._report(f"refined first weight is nonpositive at n={n}")
        if bn >= 2 * g0_refined:
            self._report(f"b_n < 2*g0 violated at n={n}")
        s = self.sigma
        if n == 1:
            # the two-entry row: weights are (g0_refined, g_last)
            if (2 * s - 1) * self._g_last - s * g0_refined <= 0:
                self._report("(2s-1)g_1 - s*g_0 <= 0 at n=1")
        elif not self._sign_checked:
            # for n >= 2 both trailing weights are constant in n
            if (2 * s - 1) * self._g_last - s * self._g_prev_last <= 0:
                self._report("(2s-1)g_n - s*g_{n-1} <= 0 for n >= 2")
            self._sign_checked = True

    def _validate_row(self, n: int, row: np.ndarray, bn: float) -> None:
        if self.validation == "off" or n < 1:
            return
        if not (np.diff(row) > 0).all():
            self._report(f"refined weight row not increasing at n={n}")
        s = self.sigma
        if (2 * s - 1) * row[-1] - s * row[-2] <= 0:
            self._report(f"(2s-1)g_n - s*g_(n-1) <= 0 at n={n}")

    def coeff_property_check(self, n_max: int) -> dict:
        """Sweep the stability inequalities through step ``n_max``.

        Report-only: evaluates the positivity chain, the sign combination
        of the two newest weights, the b_n bound, the first-to-second
        weight ratio, and a power-law fit of the inverse-weight sums.
        Returns pass/fail flags with worst margins and empirical constants.
        """
        if n_max < 1:
            raise ValueError("n_max must be >= 1")
        old_policy, self.validation = self.validation, "off"
        try:
            chain_ok = True
            sign_ok = True
            bn_ok = True
            worst_sign = np.inf
            worst_bn_ratio = 0.0
            ratio_c = 0.0
            invsum_c = 0.0
            b1_positive = None
            rows = []
            for n in range(1, n_max + 1):
                row, _ = self.refined_g_row(n)
                bn = self.bn_value(n)
                if n == 1:
                    b1_positive = bn > 0
                if not (row > 0).all() or not (np.diff(row) > 0).all():
                    chain_ok = False
                margin = (2 * self.sigma - 1) * row[-1] - self.sigma * row[-2]
                worst_sign = min(worst_sign, margin)
                if margin <= 0:
                    sign_ok = False
                ratio = bn / (2 * row[0])
                worst_bn_ratio = max(worst_bn_ratio, ratio)
                if ratio >= 1:
                    bn_ok = False
                if len(row) > 1:
                    ratio_c = max(ratio_c, row[1] / row[0])
                t_shift = (n + self.sigma) * self.tau
                invsum = self.tau * float(np.sum(1.0 / row))
                invsum_c = max(invsum_c, invsum / t_shift ** (2 - self.orders.alphas[0]))
                rows.append({"n": n, "g0": float(row[0]), "gn": float(row[-1]),
                             "monotone_ok": bool((np.diff(row) > 0).all() and (row > 0).all()),
                             "sign_ok": bool(margin > 0),
                             "bn_ratio": float(ratio)})
            return {
                "n_max": n_max,
                "positivity_chain_ok": chain_ok,
                "sign_combination_ok": sign_ok,
                "bn_bound_ok": bn_ok,
                "b1_positive": bool(b1_positive),
                "worst_sign_margin": float(worst_sign),
                "worst_bn_ratio": float(worst_bn_ratio),
                "empirical_g1_over_g0": float(ratio_c),
                "empirical_invsum_constant": float(invsum_c),
                "rows": rows,
            }
        finally:
            self.validation = old_policy

    # -- misc ----------------------------------------------------------------

    def _require_fast(self):
        if self.mode != "fast":
            raise RuntimeError("operation requires a fast-mode engine")

    @property
    def n_exp_total(self) -> int:
        return int(sum(s.n_exp for s in self.soes)) if self.soes else 0
