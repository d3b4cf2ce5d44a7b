import os

import numpy as np
import pytest

import enum_oracle
from rcc import chains, gibbs
from rcc.model import GridModel, ParameterField, load_raster


def test_sampler_config_validation():
    with pytest.raises(ValueError):
        gibbs.SamplerConfig(seed=0, sample_count=0)
    with pytest.raises(ValueError):
        gibbs.SamplerConfig(seed=0, sample_count=1, thinning=0)


def test_deterministic_given_seed():
    m = GridModel.ising(6, 5, 0.4)
    cfg = gibbs.SamplerConfig(seed=123, sample_count=4, sweeps_burn_in=50,
                              thinning=3)
    a = gibbs.gibbs_sample(m, cfg)
    b = gibbs.gibbs_sample(m, cfg)
    np.testing.assert_array_equal(a, b)
    c = gibbs.gibbs_sample(m, gibbs.SamplerConfig(124, 4, 50, 3))
    assert not np.array_equal(a, c)


def test_long_run_matches_enumeration():
    m = GridModel.ising(2, 3, 0.4, 0.1)
    cfg = gibbs.SamplerConfig(seed=5, sample_count=40000, sweeps_burn_in=200,
                              thinning=2)
    samples = gibbs.gibbs_sample(m, cfg)
    counts = np.zeros(2 ** 6)
    for pix in samples:
        counts[chains.pack_state(pix.ravel(), 2)] += 1
    configs, probs = enum_oracle.probabilities(m)
    ref = np.zeros_like(counts)
    for c, pr in zip(configs, probs):
        ref[chains.pack_state(c.ravel(), 2)] = pr
    n = len(samples)
    # thinned Gibbs samples are correlated; allow a generous chi-square slack
    chi2 = np.sum((counts - n * ref) ** 2 / (n * ref))
    assert chi2 < 4 * (len(counts) - 1)
    assert np.abs(counts / n - ref).max() < 0.01


def test_moments_match_enumeration():
    m = GridModel.ising(3, 3, 0.4)
    cfg = gibbs.SamplerConfig(seed=9, sample_count=20000, sweeps_burn_in=200,
                              thinning=2)
    samples = gibbs.gibbs_sample(m, cfg)
    from rcc.fit import empirical_moment
    mu_hat = empirical_moment(samples, m.family)
    mu = enum_oracle.moments(m)
    assert np.abs(mu_hat - mu).max() < 0.03


def test_model_hash_sensitivity():
    fam = GridModel.ising(4, 4, 0.4).family
    f1 = ParameterField.homogeneous(4, 0.0, 0.4)
    f2 = ParameterField.homogeneous(4, 0.0, 0.40000001)
    assert gibbs.model_hash(fam, f1) != gibbs.model_hash(fam, f2)
    assert gibbs.model_hash(fam, f1) == gibbs.model_hash(fam, f1)
    assert len(gibbs.model_hash(fam, f1)) == 16


def test_write_sample_set(tmp_path):
    m = GridModel.ising(4, 3, 0.4)
    cfg = gibbs.SamplerConfig(seed=1, sample_count=3, sweeps_burn_in=10,
                              thinning=1)
    samples = gibbs.gibbs_sample(m, cfg)
    field = ParameterField.homogeneous(4, 0.0, 0.4)
    out = tmp_path / "set"
    gibbs.write_sample_set(out, samples, cfg, m.family, field)
    names = sorted(os.listdir(out))
    assert "manifest.txt" in names
    back, q = load_raster(out / "sample_00001.txt")
    assert q == 2
    np.testing.assert_array_equal(back.pixels, samples[1])
    manifest = (out / "manifest.txt").read_text()
    assert "rng=numpy-PCG64" in manifest
    assert f"model_hash={gibbs.model_hash(m.family, field)}" in manifest
