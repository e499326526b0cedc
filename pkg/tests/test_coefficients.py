"""Offset root, closed-form rows, exponential-sum rows, and their identities."""

import math

import numpy as np
import pytest
from scipy.integrate import quad

from fracwave import CoefficientEngine, MultiTermOrders, solve_sigma
from fracwave.coefficients import _ab_pairs, _sigma_F

STD_ORDERS = MultiTermOrders.from_pairs([(1.9, 3.0), (1.5, 2.0), (1.2, 1.0)])


def bisect_sigma(orders, tau, iters=60):
    """Independent bisection oracle for the offset root."""
    lo = 1 - orders.betas[0] / 2
    hi = 1 - orders.betas[-1] / 2
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if _sigma_F(orders, tau, lo) * _sigma_F(orders, tau, mid) <= 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


class TestSigma:
    def test_single_term_closed_forms(self):
        assert solve_sigma(MultiTermOrders.from_pairs([(1.5, 1.0)]), 0.01).sigma == 0.75
        sv = solve_sigma(MultiTermOrders.from_pairs([(1.9, 1.0)]), 0.01)
        assert abs(sv.sigma - 0.55) <= 1e-14

    def test_multiterm_against_bisection(self):
        sv = solve_sigma(STD_ORDERS, 1 / 40)
        assert sv.bracket_lo <= sv.sigma <= sv.bracket_hi
        assert 0.55 <= sv.sigma <= 0.9
        assert abs(sv.sigma - bisect_sigma(STD_ORDERS, 1 / 40)) <= 1e-13

    @pytest.mark.parametrize("tau", [1.0, 1 / 20, 1 / 160, 1 / 4096])
    @pytest.mark.parametrize("pairs", [
        [(1.9, 3.0), (1.5, 2.0), (1.2, 1.0)],
        [(1.8, 1.0), (1.4, 2.0), (1.3, 3.0)],
        [(1.6, 1.0), (1.5, 1.0)],
    ])
    def test_bracket_and_residual(self, tau, pairs):
        orders = MultiTermOrders.from_pairs(pairs)
        sv = solve_sigma(orders, tau)
        assert sv.bracket_lo <= sv.sigma <= sv.bracket_hi
        assert sv.sigma > 0.5
        assert abs(sv.residual) <= 1e-12 * tau ** (2 - orders.betas[0])

    def test_orders_validation(self):
        with pytest.raises(ValueError):
            MultiTermOrders.from_pairs([(1.2, 1.0), (1.9, 1.0)])  # increasing
        with pytest.raises(ValueError):
            MultiTermOrders.from_pairs([(2.1, 1.0)])
        with pytest.raises(ValueError):
            MultiTermOrders.from_pairs([(1.5, -1.0)])


class TestDirectRows:
    def test_first_level_weight_closed_form(self):
        # single order 1.5 so sigma = 0.75; weight = mu * sigma**(1-beta)
        engine = CoefficientEngine(MultiTermOrders.from_pairs([(1.5, 1.0)]), 0.01)
        mu = 0.01 ** (-0.5) / math.gamma(1.5)
        expected = mu * 0.75 ** 0.5
        assert engine.direct_g_row(0, 0)[0] == pytest.approx(expected, rel=1e-15)
        assert expected == pytest.approx(9.77205, rel=1e-5)

    def test_n1_branch_instantiation(self):
        engine = CoefficientEngine(MultiTermOrders.from_pairs([(1.5, 1.0)]), 0.01)
        sigma, tau, beta = engine.sigma, 0.01, 0.5
        mu = tau ** (-beta) / math.gamma(2 - beta)
        a0 = sigma ** (1 - beta)
        a1 = (1 + sigma) ** (1 - beta) - sigma ** (1 - beta)
        b1 = (((1 + sigma) ** (2 - beta) - sigma ** (2 - beta)) / (2 - beta)
              - ((1 + sigma) ** (1 - beta) + sigma ** (1 - beta)) / 2)
        row = engine.direct_g_row(0, 1)
        assert row[0] == pytest.approx(mu * (a1 - b1), rel=1e-15)
        assert row[1] == pytest.approx(mu * (a0 + b1), rel=1e-15)

    @pytest.mark.parametrize("beta", [0.1, 0.3, 0.5, 0.7, 0.9])
    def test_rows_positive_increasing(self, beta):
        orders = MultiTermOrders.from_pairs([(1.0 + beta, 1.0)])
        engine = CoefficientEngine(orders, 0.02)
        for n in range(51):
            row = engine.direct_g_row(0, n)
            assert (row > 0).all()
            assert (np.diff(row) > 0).all()

    def test_multiterm_row_linearity(self):
        engine = CoefficientEngine(STD_ORDERS, 1 / 40)
        for n in (0, 1, 5, 17):
            combo = (3 * engine.direct_g_row(0, n) + 2 * engine.direct_g_row(1, n)
                     + 1 * engine.direct_g_row(2, n))
            assert np.allclose(engine.multiterm_direct_row(n), combo, rtol=1e-15)

    def test_single_term_multiterm_row_identity(self):
        engine = CoefficientEngine(MultiTermOrders.from_pairs([(1.7, 1.0)]), 0.05)
        for n in (0, 3, 20):
            assert np.array_equal(engine.multiterm_direct_row(n),
                                  engine.direct_g_row(0, n))

    def test_multiterm_row_positivity_sweep(self):
        engine = CoefficientEngine(STD_ORDERS, 1 / 40)
        for n in range(51):
            assert (engine.multiterm_direct_row(n) > 0).all()


class TestCurrentPanelMoments:
    def test_small_x_limits(self):
        A, B = _ab_pairs(np.array([1e-300]), 0.7)
        assert A[0] == pytest.approx(1.0, abs=1e-12)
        assert B[0] == pytest.approx(0.0, abs=1e-12)

    def test_against_quadrature_oracle(self):
        sigma = 0.75
        for x in (1e-3, 1e-2, 0.5, 1.0, 7.0):
            A, B = _ab_pairs(np.array([x]), sigma)
            qa = quad(lambda s: (1.5 - s) * np.exp(-x * (sigma + 1 - s)), 0, 1,
                      epsabs=1e-15, epsrel=1e-13)[0]
            qb = quad(lambda s: (s - 0.5) * np.exp(-x * (sigma + 1 - s)), 0, 1,
                      epsabs=1e-15, epsrel=1e-13)[0]
            assert A[0] == pytest.approx(qa, abs=1e-12)
            assert B[0] == pytest.approx(qb, abs=1e-12)

    def test_pairs_ordering_on_built_engine(self):
        tau = 1 / 40
        eps = [tau ** (4 - a) * 1e-3 for a in STD_ORDERS.alphas]
        engine = CoefficientEngine(STD_ORDERS, tau, mode="fast", eps=eps)
        A, B = engine.fast_AB()
        assert (A > B).all()
        assert (B > 0).all()


def fast_engine(orders=STD_ORDERS, tau=1 / 40, eps_scale=1e-3):
    eps = [tau ** (4 - a) * eps_scale for a in orders.alphas]
    return CoefficientEngine(orders, tau, mode="fast", eps=eps), eps


class TestFastRows:
    def test_deviation_from_direct_rows(self):
        engine, eps = fast_engine()
        direct = CoefficientEngine(STD_ORDERS, 1 / 40)
        bound = 10 * max(eps) * sum(
            l / math.gamma(1 - b) for b, l in zip(STD_ORDERS.betas, STD_ORDERS.lams))
        for n in range(1, 65):
            dev = np.abs(engine.fast_g_row(n) - direct.multiterm_direct_row(n)).max()
            assert dev <= bound

    def test_shift_identity_row_reindex(self):
        engine, _ = fast_engine()
        for n in (2, 7, 30):
            row_next = engine.fast_g_row(n + 1)
            row_prev = engine.fast_g_row(n)
            for k in range(2, n + 1):
                assert row_next[k] == pytest.approx(row_prev[k - 1], rel=5e-16, abs=5e-16)

    def test_shift_identity_first_entry(self):
        engine, _ = fast_engine()
        for n in (1, 2, 11, 33):
            row_next = engine.fast_g_row(n + 1)
            row_prev = engine.fast_g_row(n)
            assert row_next[1] == pytest.approx(row_prev[0] + engine.bn_value(n),
                                                rel=1e-13)

    def test_bn_positive_bounded_decaying(self):
        engine, _ = fast_engine()
        g_last = None
        for n in range(1, 80):
            bn = engine.bn_value(n)
            row, _ = engine.refined_g_row(n)
            assert bn > 0
            assert bn < 2 * row[0]

    def test_bn_geometric_decay_single_term(self):
        orders = MultiTermOrders.from_pairs([(1.5, 1.0)])
        tau = 1 / 32
        engine = CoefficientEngine(orders, tau, mode="fast", eps=[1e-9])
        worst = float(np.exp(-engine.s_flat.min() * tau))
        for n in range(1, 60):
            ratio = engine.bn_value(n + 1) / engine.bn_value(n)
            assert ratio <= worst + 1e-15
            assert ratio < 1.0

    def test_incremental_accumulator_matches_explicit_powers(self):
        engine, _ = fast_engine()
        for n in (1, 2, 3, 10, 25):
            engine.advance_to(n)
            explicit = float(np.sum(engine._wlB * np.exp(-(n - 1) * engine.x_flat)))
            assert engine.bn_value(n) == pytest.approx(explicit, rel=1e-11)


class TestRefinedRows:
    def test_b_tilde_algebraic_identity(self):
        engine, _ = fast_engine()
        s = engine.sigma
        for n in (1, 3, 12):
            row, b_tilde = engine.refined_g_row(n)
            bn = engine.bn_value(n)
            assert b_tilde * row[0] == pytest.approx(
                (3 * s - 1) * bn / (2 * (1 - s)), rel=1e-14)

    def test_monotone_chain_and_sign_sweep(self):
        engine, _ = fast_engine()
        s = engine.sigma
        for n in range(1, 41):
            row, _ = engine.refined_g_row(n)
            assert (row > 0).all()
            assert (np.diff(row) > 0).all()
            assert (2 * s - 1) * row[-1] - s * row[-2] > 0

    def test_first_level_weight(self):
        engine, _ = fast_engine()
        row, b_tilde = engine.refined_g_row(0)
        assert b_tilde == 0.0
        assert row[0] == pytest.approx(engine.a0_agg / (1 - engine.sigma), rel=1e-15)

    def test_direct_mode_refined_row_matches_definition(self):
        engine = CoefficientEngine(STD_ORDERS, 1 / 20)
        for n in (1, 4, 19):
            row, _ = engine.refined_g_row(n)
            raw = engine.multiterm_direct_row(n)
            bn = engine.bn_value(n)
            assert row[0] == pytest.approx(raw[0] - bn / 2, rel=1e-14)
            assert np.array_equal(row[1:], raw[1:])

    def test_first_weight_power_law_slope(self):
        # log g0 against log t_{n+sigma} must slope inside [1-a0, 1-am]
        engine, _ = fast_engine(tau=1 / 160)
        ns = np.arange(8, 160)
        g0s = np.array([engine.refined_g_row(int(n))[0][0] for n in ns])
        t = (ns + engine.sigma) / 160
        slope = np.polyfit(np.log(t), np.log(g0s), 1)[0]
        assert 1 - STD_ORDERS.alphas[0] - 0.05 <= slope <= 1 - STD_ORDERS.alphas[-1] + 0.05


class TestPropertyCheck:
    def test_clean_configuration_passes(self):
        orders = MultiTermOrders.from_pairs([(1.5, 1.0)])
        engine = CoefficientEngine(orders, 0.01, mode="fast", eps=[1e-10])
        report = engine.coeff_property_check(100)
        assert report["positivity_chain_ok"]
        assert report["sign_combination_ok"]
        assert report["bn_bound_ok"]
        assert report["b1_positive"]
        assert report["worst_sign_margin"] > 0
        assert report["rows"][0]["n"] == 1

    def test_huge_tolerance_is_reported_not_hidden(self):
        # eps = 1 corrupts the compressed weights; whichever inequality
        # breaks first must be flagged in the report rather than raised
        orders = MultiTermOrders.from_pairs([(1.5, 1.0)])
        engine = CoefficientEngine(orders, 0.01, mode="fast", eps=[1.0],
                                   validation="off")
        report = engine.coeff_property_check(50)
        flags = (report["positivity_chain_ok"], report["sign_combination_ok"],
                 report["bn_bound_ok"])
        assert not all(flags)

    def test_direct_mode_report(self):
        engine = CoefficientEngine(STD_ORDERS, 1 / 20)
        report = engine.coeff_property_check(19)
        assert report["positivity_chain_ok"]
        assert report["sign_combination_ok"]
        assert report["bn_bound_ok"]
