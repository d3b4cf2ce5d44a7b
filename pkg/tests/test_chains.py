import numpy as np
import pytest

import enum_oracle
from rcc import chains
from rcc.errors import StateSpaceTooLarge
from rcc.model import (BlockParams, GridModel, LatticeShape, PairwiseFamily,
                       restrict)


def random_model(rng, rows, cols, q=2):
    fam = PairwiseFamily(q, rng.normal(size=q), rng.normal(size=(q, q)),
                         rng.normal(size=(q, q)))
    params = BlockParams(rng.normal(size=(rows, cols)),
                         rng.normal(size=(rows, cols - 1)),
                         rng.normal(size=(rows - 1, cols)))
    return GridModel(fam, LatticeShape(rows, cols), params)


def test_enumerate_states_digit_order():
    d = chains.enumerate_states(2, 3)
    assert d.shape == (8, 3)
    np.testing.assert_array_equal(d[1], [0, 0, 1])   # digit 0 most significant
    np.testing.assert_array_equal(d[4], [1, 0, 0])
    assert chains.pack_state([1, 0, 1], 2) == 5


def test_state_cap_enforced(monkeypatch):
    m = GridModel.ising(13, 2, 0.1)
    with pytest.raises(StateSpaceTooLarge):
        chains.column_chain(m)
    monkeypatch.setenv("RCC_STATE_CAP", "10000")
    chains.column_chain(m)


@pytest.mark.parametrize("rows,cols,q", [(3, 3, 2), (2, 4, 2), (2, 3, 3)])
def test_log_partition_vs_enumeration(rows, cols, q):
    rng = np.random.default_rng(rows * 10 + cols + q)
    m = random_model(rng, rows, cols, q)
    ref = enum_oracle.log_partition(m)
    assert chains.log_partition(chains.column_chain(m)) == pytest.approx(ref, abs=1e-10)
    assert chains.log_partition(chains.row_chain(m)) == pytest.approx(ref, abs=1e-10)


def test_entropy_and_moments_vs_enumeration():
    rng = np.random.default_rng(42)
    m = random_model(rng, 3, 3)
    ch = chains.column_chain(m)
    post = chains.marginals(ch)
    assert chains.chain_entropy(ch, post) == pytest.approx(
        enum_oracle.entropy(m), abs=1e-10)
    np.testing.assert_allclose(chains.chain_moments(ch, post),
                               enum_oracle.moments(m), atol=1e-10)
    rch = chains.row_chain(m)
    np.testing.assert_allclose(chains.chain_moments(rch),
                               enum_oracle.moments(m), atol=1e-10)


def test_moments_are_log_partition_gradient():
    rng = np.random.default_rng(9)
    m = random_model(rng, 2, 3)
    flat = m.params.pack()
    mu = chains.chain_moments(chains.column_chain(m))
    eps = 1e-6
    for idx in range(len(flat)):
        up, dn = flat.copy(), flat.copy()
        up[idx] += eps
        dn[idx] -= eps
        fd = (
            chains.log_partition(chains.column_chain(GridModel(
                m.family, m.shape, BlockParams.unpack(up, 2, 3))))
            - chains.log_partition(chains.column_chain(GridModel(
                m.family, m.shape, BlockParams.unpack(dn, 2, 3))))
        ) / (2 * eps)
        assert mu[idx] == pytest.approx(fd, abs=1e-7)


def test_node_marginals_vs_enumeration():
    rng = np.random.default_rng(17)
    m = random_model(rng, 2, 3)
    ch = chains.column_chain(m)
    post = chains.marginals(ch)
    ref = enum_oracle.node_marginals(m)
    for c in range(3):
        for r in range(2):
            got = np.zeros(2)
            for s, pr in enumerate(post.node_marginals[c]):
                got[ch.digits[s, r]] += pr
            np.testing.assert_allclose(got, ref[r, c], atol=1e-10)


def test_sequential_conditionals_compose_to_joint():
    rng = np.random.default_rng(23)
    m = random_model(rng, 2, 4)
    ch = chains.column_chain(m)
    post = chains.marginals(ch)
    states = [3, 0, 2, 1]
    logp = 0.0
    for t in range(4):
        cond = post.sequential_conditional(states[:t], t)
        assert cond.sum() == pytest.approx(1.0, abs=1e-12)
        logp += np.log(cond[states[t]])
    assert logp == pytest.approx(chains.chain_log_prob(ch, states), abs=1e-10)


def test_clamped_boundary_matches_conditional_enumeration():
    rng = np.random.default_rng(31)
    m = random_model(rng, 4, 3)
    above = rng.integers(0, 2, size=3)
    below = rng.integers(0, 2, size=3)
    boundary = chains.ClampedBoundary(above, m.params.edge_v[0],
                                      below, m.params.edge_v[2])
    sub = restrict(m, 1, 3)
    ch = chains.column_chain(sub, boundary=boundary)
    configs, probs = enum_oracle.conditional_on_rows(m, {0: above, 3: below})
    for cfg, pr in zip(configs, probs):
        states = [chains.pack_state(cfg[:, c], 2) for c in range(3)]
        assert chains.chain_log_prob(ch, states) == pytest.approx(
            np.log(pr), abs=1e-10)


def test_sample_chain_matches_distribution():
    rng = np.random.default_rng(5)
    m = random_model(rng, 1, 3)
    ch = chains.column_chain(m)
    post = chains.marginals(ch)
    n = 20000
    counts = {}
    smp = np.random.default_rng(77)
    for _ in range(n):
        s = tuple(chains.sample_chain(ch, None, posterior=post, rng=smp))
        counts[s] = counts.get(s, 0) + 1
    for s, c in counts.items():
        p = np.exp(chains.chain_log_prob(ch, list(s)))
        assert abs(c / n - p) < 4 * np.sqrt(p * (1 - p) / n) + 1e-3


def test_chain_to_pixels_round_trip():
    rng = np.random.default_rng(8)
    m = random_model(rng, 3, 4)
    pix = rng.integers(0, 2, size=(3, 4))
    ch = chains.column_chain(m)
    states = [chains.pack_state(pix[:, c], 2) for c in range(4)]
    np.testing.assert_array_equal(chains.chain_to_pixels(ch, states), pix)
    rch = chains.row_chain(m)
    rstates = [chains.pack_state(pix[r, :], 2) for r in range(3)]
    np.testing.assert_array_equal(chains.chain_to_pixels(rch, rstates), pix)
