import math

import numpy as np
import pytest

import enum_oracle
from rcc import chains, fit
from rcc.errors import DidNotConverge, HullBoundary
from rcc.model import (BlockParams, Configuration, GridModel, LatticeShape,
                       PairwiseFamily, statistic)


FAM = PairwiseFamily.ising()


def test_empirical_moment_single_sample_is_statistic():
    pix = np.array([[0, 1, 1], [1, 0, 1]])
    mu = fit.empirical_moment(pix, FAM)
    np.testing.assert_allclose(
        mu, statistic(Configuration(LatticeShape(2, 3), pix), FAM))


def test_empirical_moment_spin_flip_symmetry():
    pix = np.array([[0, 1], [1, 1]])
    mu = fit.empirical_moment(np.stack([pix, 1 - pix]), FAM)
    np.testing.assert_allclose(mu[:4], 0.0, atol=1e-15)   # node terms cancel


def test_empirical_moment_pools_blocks():
    rng = np.random.default_rng(0)
    blocks = rng.integers(0, 2, size=(7, 1, 4))
    mu = fit.empirical_moment(blocks, FAM)
    manual = np.mean([statistic(Configuration(LatticeShape(1, 4), b), FAM)
                      for b in blocks], axis=0)
    np.testing.assert_allclose(mu, manual)


def test_objective_at_zero_is_pixels_log2():
    mu_hat = np.zeros(4 + 3 + 0)
    theta = BlockParams.zeros(1, 4).pack()
    assert fit.objective(mu_hat, theta, FAM, 1, 4) == pytest.approx(
        4 * math.log(2), abs=1e-12)


def test_objective_equals_mean_negative_log_likelihood():
    rng = np.random.default_rng(1)
    m = GridModel(FAM, LatticeShape(2, 2),
                  BlockParams(rng.normal(size=(2, 2)), rng.normal(size=(2, 1)),
                              rng.normal(size=(1, 2))))
    samples = rng.integers(0, 2, size=(9, 2, 2))
    mu_hat = fit.empirical_moment(samples, FAM)
    obj = fit.objective(mu_hat, m.params.pack(), FAM, 2, 2)
    lz = enum_oracle.log_partition(m)
    nll = np.mean([lz - m.score(Configuration(LatticeShape(2, 2), s))
                   for s in samples])
    assert obj == pytest.approx(nll, abs=1e-10)


def test_objective_convexity_probe():
    rng = np.random.default_rng(2)
    mu_hat = fit.empirical_moment(rng.integers(0, 2, size=(5, 2, 3)), FAM)
    for _ in range(20):
        a = rng.normal(size=13)
        b = rng.normal(size=13)
        mid = fit.objective(mu_hat, (a + b) / 2, FAM, 2, 3)
        ends = (fit.objective(mu_hat, a, FAM, 2, 3)
                + fit.objective(mu_hat, b, FAM, 2, 3)) / 2
        assert mid <= ends + 1e-12


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    mu_hat = fit.empirical_moment(rng.integers(0, 2, size=(5, 1, 4)), FAM)
    theta = rng.normal(scale=0.3, size=7)
    grad = fit.objective_gradient(mu_hat, theta, FAM, 1, 4)
    eps = 1e-4
    for idx in range(7):
        up, dn = theta.copy(), theta.copy()
        up[idx] += eps
        dn[idx] -= eps
        fd = (fit.objective(mu_hat, up, FAM, 1, 4)
              - fit.objective(mu_hat, dn, FAM, 1, 4)) / (2 * eps)
        assert grad[idx] == pytest.approx(fd, abs=1e-6)


def test_gradient_at_zero_with_all_plus_sample():
    mu_hat = fit.empirical_moment(np.ones((1, 1, 3), dtype=int), FAM)
    grad = fit.objective_gradient(mu_hat, np.zeros(5), FAM, 1, 3)
    np.testing.assert_allclose(grad, -1.0, atol=1e-12)


def test_fit_zero_target_returns_zero_parameter():
    target = np.zeros(2 * 3 + 2 * 2 + 1 * 3)
    res = fit.fit(target, FAM, 2, 3)
    assert np.abs(res.theta_hat.pack()).max() <= 1e-6
    assert res.converged


def test_fit_recovers_oracle_target():
    rng = np.random.default_rng(4)
    m = GridModel(FAM, LatticeShape(1, 4),
                  BlockParams(rng.normal(scale=0.4, size=(1, 4)),
                              rng.normal(scale=0.4, size=(1, 3)),
                              np.zeros((0, 4))))
    target = enum_oracle.moments(m)
    res = fit.fit(target, FAM, 1, 4, eps_mu=1e-8)
    assert res.final_gradient_norm <= 1e-8
    achieved = chains.chain_moments(chains.column_chain(
        GridModel(FAM, LatticeShape(1, 4), res.theta_hat)))
    assert np.abs(achieved - target).max() <= 1e-8
    # minimal family: the recovered parameter is the generating one
    np.testing.assert_allclose(res.theta_hat.pack(), m.params.pack(), atol=1e-6)


def test_fit_trace_monotone_and_gradient_identity():
    rng = np.random.default_rng(5)
    target = fit.empirical_moment(rng.integers(0, 2, size=(50, 2, 3)), FAM)
    res = fit.fit(target, FAM, 2, 3)
    assert np.all(np.diff(res.objective_trace) <= 0)
    assert res.final_gradient_norm == pytest.approx(
        np.abs(res.achieved_moment - res.target_moment).max(), abs=1e-15)


def test_fit_optimality_probe():
    rng = np.random.default_rng(6)
    target = fit.empirical_moment(rng.integers(0, 2, size=(50, 1, 4)), FAM)
    res = fit.fit(target, FAM, 1, 4, eps_mu=1e-9)
    f_opt = fit.objective(target, res.theta_hat.pack(), FAM, 1, 4)
    for _ in range(50):
        delta = rng.choice([-0.05, 0.05], size=7)
        assert fit.objective(target, res.theta_hat.pack() + delta,
                             FAM, 1, 4) > f_opt


def test_hull_boundary_detection():
    target = np.zeros(7)
    target[4] = 1.0                     # an edge moment at the hull maximum
    with pytest.raises(HullBoundary):
        fit.fit(target, FAM, 1, 4)
    shrunk = fit.shrink_toward_uniform(target, FAM, 1, 4)
    fit.check_hull(shrunk, FAM, 1, 4)   # blended target is interior


def test_did_not_converge_carries_result():
    rng = np.random.default_rng(7)
    target = fit.empirical_moment(rng.integers(0, 2, size=(50, 2, 3)), FAM)
    with pytest.raises(DidNotConverge) as exc:
        fit.fit(target, FAM, 2, 3, eps_mu=1e-12, max_iter=2)
    res = exc.value.result
    assert res is not None and not res.converged
    assert res.iterations == 2


def test_fit_result_serialization_round_trip(tmp_path):
    rng = np.random.default_rng(8)
    target = fit.empirical_moment(rng.integers(0, 2, size=(20, 1, 4)), FAM)
    res = fit.fit(target, FAM, 1, 4)
    path = tmp_path / "fit.txt"
    fit.save_fit_result(path, res)
    theta = fit.load_fit_theta(path)
    np.testing.assert_array_equal(theta.pack(), res.theta_hat.pack())
    text = path.read_text()
    assert "line_search_sufficient_decrease=0.0001" in text
