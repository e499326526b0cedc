"""Kernel-compression construction, evaluation, and certification tests."""

import numpy as np
import pytest

from fracwave import SOEApprox, SOEBuildError, build_soe, eval_soe, soe_error_scan
from fracwave.analysis import fit_exponent


def test_eval_at_one_is_one():
    # t**(-beta) = 1 at t = 1 for any beta
    soe = build_soe(0.5, 1e-8, 0.01, 1.0)
    assert abs(eval_soe(soe, 1.0) - 1.0) <= 1e-8


def test_eval_interior_point_against_power():
    soe = build_soe(0.5, 1e-8, 0.01, 1.0)
    # 0.04**(-0.5) = 5 exactly
    assert abs(eval_soe(soe, 0.04) - 5.0) <= 1e-8


def test_eval_at_cutoff_boundary():
    soe = build_soe(0.35, 1e-7, 0.02, 1.0)
    assert abs(eval_soe(soe, soe.tau_hat) - soe.tau_hat ** (-0.35)) <= 1e-7


def test_single_node_synthetic_at_zero():
    # e^0 = 1; out-of-range t is permitted, just unguaranteed
    soe = SOEApprox(beta=0.5, eps_target=1.0, tau_hat=0.1, t_final=1.0,
                    nodes=np.array([1.0]), weights=np.array([1.0]),
                    n_exp=1, eps_achieved=0.0)
    assert eval_soe(soe, 0.0) == pytest.approx(1.0, abs=0)


def test_scan_matches_independent_recomputation():
    soe = build_soe(0.2, 1e-6, 0.005, 1.0)
    n = 10_000
    result = soe_error_scan(soe, n)
    t = np.geomspace(soe.tau_hat, soe.t_final, n)
    expected = np.abs(t ** (-soe.beta) - eval_soe(soe, t)).max()
    assert result["max_abs_error"] == expected
    assert result["max_abs_error"] <= 1e-6


def test_scan_detects_degraded_approximation():
    # drop the largest nodes (the ones resolving t near the cutoff); the
    # construction's safety margin absorbs one node, so cut a whole quarter
    soe = build_soe(0.2, 1e-6, 0.005, 1.0)
    keep = soe.n_exp - soe.n_exp // 4
    clipped = SOEApprox(beta=soe.beta, eps_target=soe.eps_target,
                        tau_hat=soe.tau_hat, t_final=soe.t_final,
                        nodes=soe.nodes[:keep], weights=soe.weights[:keep],
                        n_exp=keep, eps_achieved=soe.eps_achieved)
    assert soe_error_scan(clipped, 5000)["max_abs_error"] > soe.eps_target


def test_scan_rejects_single_sample():
    soe = build_soe(0.5, 1e-6, 0.01, 1.0)
    with pytest.raises(ValueError):
        soe_error_scan(soe, 1)


def test_certification_honesty_at_ten_x_density():
    # a 10x denser scan may not reveal errors above twice the certified one
    for beta, eps in ((0.3, 1e-8), (0.7, 1e-10)):
        soe = build_soe(beta, eps, 1e-3, 1.0)
        dense = soe_error_scan(soe, 10 * max(10 * soe.n_exp, 1000))
        assert dense["max_abs_error"] <= 2 * max(soe.eps_achieved, 1e-300)
        assert dense["max_abs_error"] <= eps


def test_node_count_growth_subquadratic_in_log():
    # halve tau_hat four times; n_exp must grow no faster than log^2
    tau_hats = [0.01 / 2**k for k in range(5)]
    counts = [build_soe(0.4, 1e-8, th, 1.0).n_exp for th in tau_hats]
    assert all(b >= a for a, b in zip(counts, counts[1:]))
    slope = fit_exponent([np.log(1 / th) for th in tau_hats], counts)
    assert slope < 2.0


def test_monotone_decay_and_positivity():
    soe = build_soe(0.6, 1e-9, 0.004, 1.0)
    t = np.geomspace(soe.tau_hat, soe.t_final, 4000)
    vals = eval_soe(soe, t)
    assert (vals > 0).all()
    assert (np.diff(vals) < 0).all()


def test_invariants_of_built_object():
    soe = build_soe(0.8, 1e-7, 0.01, 2.0)
    assert soe.eps_achieved <= soe.eps_target
    assert (np.diff(soe.nodes) > 0).all()
    assert (soe.weights > 0).all()
    assert soe.n_exp == soe.nodes.size


@pytest.mark.parametrize("kwargs", [
    dict(beta=0.0, eps=1e-8, tau_hat=0.01, t_final=1.0),
    dict(beta=1.0, eps=1e-8, tau_hat=0.01, t_final=1.0),
    dict(beta=0.5, eps=-1e-8, tau_hat=0.01, t_final=1.0),
    dict(beta=0.5, eps=1e-8, tau_hat=0.0, t_final=1.0),
    dict(beta=0.5, eps=1e-8, tau_hat=2.0, t_final=1.0),
])
def test_parameter_validation(kwargs):
    with pytest.raises(ValueError):
        build_soe(**kwargs)


def test_unreachable_tolerance_raises():
    with pytest.raises(SOEBuildError):
        build_soe(0.5, 1e-18, 1e-4, 1.0)


def test_dump_csv(tmp_path):
    soe = build_soe(0.5, 1e-6, 0.01, 1.0)
    path = tmp_path / "nodes.csv"
    soe.dump_csv(path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "node,weight"
    assert len(lines) == soe.n_exp + 1
