#################################################################
#   Libraries
#################################################################
import numpy as np
import pytest
from scipy import stats

from ftgmap.diagnostics import ess_map
from ftgmap.forward import convolution_model, identity_model, paper_truth
from ftgmap.fractional import grunwald_weights
from ftgmap.grid import Grid
from ftgmap.measures import GaussianMeasure, HyperPrior
from ftgmap.posterior import HierarchicalPosterior, conjugate_posterior
from ftgmap.samplers import (
    Chain,
    PcnConfig,
    TmisConfig,
    acceptance_probability,
    log_acceptance_ratio,
    pcn_sample,
    posterior_summary,
    read_chain,
    tmis_sample,
    tune_pcn_beta,
    write_chain,
)
from ftgmap.transportmap import DiagonalMap, MonotonicityError, initial_map

#################################################################
#   Data
#################################################################
class FlatPosterior(object):
    """Potential identically zero."""

    def potential(self, u, lam):
        return np.zeros(np.shape(u)[:-1])


def toy_posterior(d=2, alpha=1.0, sigma=0.5, k=3.0, seed=0):
    rng = np.random.default_rng(seed)
    model = identity_model(Grid.line(d), sigma=sigma)
    prior = GaussianMeasure.diagonal(np.zeros(d), 1.0)
    weights = None if alpha is None else grunwald_weights(alpha, d + 1)
    return HierarchicalPosterior(model, rng.standard_normal(d), prior, weights, HyperPrior(k, 1.0))


def exact_map(posterior, reference):
    conjugate = conjugate_posterior(posterior.model, posterior.gaussian, posterior.data)
    return initial_map(conjugate, reference), conjugate


def make_chain(samples, burn_in=0):
    samples = np.asarray(samples, dtype=float)
    retained = samples[burn_in:]
    return Chain(
        samples=samples,
        stored_indices=np.arange(samples.shape[0]),
        length=samples.shape[0],
        accepted=0,
        proposed=samples.shape[0] - 1,
        seed=0,
        lam=1.0,
        burn_in=burn_in,
        mean=retained.mean(axis=0),
        std=retained.std(axis=0),
    )


def quadrature_chi_square(posterior, lam, states, center, width, bins=10, points=50):
    """Chi-square p-value of 2D states against quadrature of exp(log_density)."""
    edges = [np.linspace(c - w, c + w, bins + 1) for c, w in zip(center, width)]
    nodes = []
    for axis in range(2):
        step = (edges[axis][-1] - edges[axis][0]) / (bins * points)
        nodes.append(edges[axis][0] + step * (np.arange(bins * points) + 0.5))
    first, second = np.meshgrid(nodes[0], nodes[1], indexing="ij")
    log_density = posterior.log_density(np.column_stack((first.ravel(), second.ravel())), lam)
    density = np.exp(log_density - log_density.max()).reshape(bins, points, bins, points)
    expected = density.sum(axis=(1, 3)).ravel()
    observed, _, _ = np.histogram2d(states[:, 0], states[:, 1], bins=edges)
    observed = observed.ravel()
    expected = expected / expected.sum() * observed.sum()
    kept = expected >= 5.0
    expected = expected[kept] / expected[kept].sum() * observed[kept].sum()
    return stats.chisquare(observed[kept], expected).pvalue

#################################################################
#   Configs
#################################################################
def test_config_validation():
    prior = GaussianMeasure.diagonal(np.zeros(2), 1.0)
    with pytest.raises(ValueError, match="beta"):
        PcnConfig(beta=0.0, steps=10, prior=prior, lam=1.0)
    with pytest.raises(ValueError, match="burn_in"):
        PcnConfig(beta=0.5, steps=10, prior=prior, lam=1.0, burn_in=10)
    with pytest.raises(ValueError, match="lambda"):
        PcnConfig(beta=0.5, steps=10, prior=prior, lam=0.0)
    with pytest.raises(ValueError, match="linear map"):
        TmisConfig(DiagonalMap.identity(2, degree=2), prior, 10, 1.0)
    with pytest.raises(MonotonicityError):
        TmisConfig(DiagonalMap.linear([0.0, 0.0], [1.0, -1.0]), prior, 10, 1.0)
    with pytest.raises(ValueError, match="acceptance"):
        TmisConfig(DiagonalMap.identity(2), prior, 10, 1.0, acceptance="metropolis")


def test_burn_in_defaults():
    prior = GaussianMeasure.diagonal(np.zeros(2), 1.0)
    assert PcnConfig(beta=0.5, steps=101, prior=prior, lam=1.0).retained_from == 50
    tmis = TmisConfig(DiagonalMap.identity(2), prior, 100, 1.0)
    assert tmis.retained_from == 0
    assert tmis.sampling_reference is prior

#################################################################
#   pCN
#################################################################
def test_pcn_flat_target_accepts_everything():
    prior = GaussianMeasure.diagonal(np.zeros(3), [1.0, 4.0, 9.0])
    chain = pcn_sample(FlatPosterior(), PcnConfig(beta=0.4, steps=500, prior=prior, lam=1.0))
    assert chain.accepted == chain.proposed == 499
    assert chain.acceptance_rate == 1.0


def test_pcn_beta_one_draws_from_prior():
    prior = GaussianMeasure.diagonal([1.0, -2.0], [1.0, 4.0])
    chain = pcn_sample(FlatPosterior(), PcnConfig(beta=1.0, steps=20000, prior=prior, lam=1.0,
                                                  seed=1, burn_in=0))
    np.testing.assert_allclose(chain.samples.mean(axis=0), prior.mean, atol=0.05)
    np.testing.assert_allclose(np.cov(chain.samples.T), prior.covariance, atol=0.2)


def test_pcn_initial_state_is_a_prior_draw():
    prior = GaussianMeasure.diagonal(np.zeros(4), 2.0)
    chain = pcn_sample(toy_posterior(d=4), PcnConfig(beta=0.3, steps=10, prior=prior,
                                                     lam=1.0, seed=7))
    expected = prior.sample(1, np.random.default_rng(7))[0]
    np.testing.assert_array_equal(chain.samples[0], expected)


def test_pcn_rejections_copy_previous_state():
    posterior = toy_posterior(d=4, sigma=0.1)
    chain = pcn_sample(posterior, PcnConfig(beta=0.6, steps=2000, prior=posterior.gaussian,
                                            lam=2.0, seed=2))
    moved = np.any(chain.samples[1:] != chain.samples[:-1], axis=1)
    assert 0 < chain.accepted < chain.proposed
    assert np.sum(moved) == chain.accepted
    stayed = np.flatnonzero(~moved)
    np.testing.assert_array_equal(chain.samples[stayed + 1], chain.samples[stayed])


def test_pcn_is_reproducible():
    posterior = toy_posterior(d=3)
    config = PcnConfig(beta=0.5, steps=300, prior=posterior.gaussian, lam=1.0, seed=3)
    first, second = pcn_sample(posterior, config), pcn_sample(posterior, config)
    np.testing.assert_array_equal(first.samples, second.samples)
    assert first.accepted == second.accepted


def test_pcn_ignores_additive_log_density_constant():
    posterior = toy_posterior(d=3, k=3.0)
    shifted = toy_posterior(d=3, k=5000.0)
    config = PcnConfig(beta=0.5, steps=300, prior=posterior.gaussian, lam=1.0, seed=4)
    np.testing.assert_array_equal(pcn_sample(posterior, config).samples,
                                  pcn_sample(shifted, config).samples)


def test_streaming_moments_match_stored_samples():
    posterior = toy_posterior(d=3)
    chain = pcn_sample(posterior, PcnConfig(beta=0.5, steps=1001, prior=posterior.gaussian,
                                            lam=1.0, seed=5, trace_indices=[1]))
    retained = chain.samples[chain.burn_in:]
    assert chain.burn_in == 500
    np.testing.assert_allclose(chain.mean, retained.mean(axis=0), rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(chain.std, retained.std(axis=0), rtol=1e-8)
    np.testing.assert_array_equal(chain.traces[1], chain.samples[:, 1])


def test_large_dimension_chains_are_thinned():
    prior = GaussianMeasure.diagonal(np.zeros(300), 1.0)
    chain = pcn_sample(FlatPosterior(), PcnConfig(beta=0.5, steps=3000, prior=prior, lam=1.0,
                                                  trace_indices=[0, 299]))
    assert not chain.is_complete
    assert chain.samples.shape == (1000, 300)
    np.testing.assert_array_equal(chain.stored_indices, np.arange(0, 3000, 3))
    assert chain.traces[299].shape == (3000,)
    np.testing.assert_array_equal(chain.samples[:, 0], chain.traces[0][::3])
    mean, std = posterior_summary(chain, chain.burn_in)
    np.testing.assert_array_equal(mean.values, chain.mean)
    np.testing.assert_array_equal(std.values, chain.std)


@pytest.mark.slow
def test_pcn_leaves_the_prior_invariant():
    prior = GaussianMeasure.diagonal(np.zeros(3), [0.5, 1.0, 2.0])
    chain = pcn_sample(FlatPosterior(), PcnConfig(beta=0.5, steps=100000, prior=prior,
                                                  lam=1.0, seed=6, burn_in=0))
    _, std = posterior_summary(chain, 0)
    np.testing.assert_allclose(std.values, prior.std, rtol=0.05)
    thinned = chain.samples[::40, 2]
    assert stats.kstest(thinned, "norm", args=(0.0, np.sqrt(2.0))).pvalue > 0.01


@pytest.mark.slow
def test_pcn_matches_quadrature():
    posterior = toy_posterior(d=2, alpha=1.0, sigma=0.5, seed=8)
    lam = 2.0
    chain = pcn_sample(posterior, PcnConfig(beta=0.6, steps=100000, prior=posterior.gaussian,
                                            lam=lam, seed=9, burn_in=1000))
    _, conjugate = exact_map(posterior, posterior.gaussian)
    states = chain.samples[1000::50]
    assert quadrature_chi_square(posterior, lam, states, conjugate.mean,
                                 4.0 * conjugate.std) > 0.01

#################################################################
#   TMIS
#################################################################
def test_tmis_flat_target_accepts_everything():
    reference = GaussianMeasure.diagonal(np.zeros(2), 1.0)
    config = TmisConfig(DiagonalMap.linear([1.0, 2.0], [0.1, 0.2]), reference, 200, 1.0)
    chain = tmis_sample(FlatPosterior(), config)
    assert chain.accepted == chain.proposed == 199
    np.testing.assert_array_equal(chain.samples[0], [1.0, 2.0])


def test_tmis_starts_at_initial_state():
    posterior = toy_posterior(d=3)
    reference = GaussianMeasure.diagonal(np.zeros(3), 1.0)
    config = TmisConfig(DiagonalMap.identity(3), reference, 50, 1.0,
                        initial_state=np.array([0.1, 0.2, 0.3]))
    chain = tmis_sample(posterior, config)
    np.testing.assert_array_equal(chain.samples[0], [0.1, 0.2, 0.3])


def test_tmis_rejections_copy_previous_state():
    posterior = toy_posterior(d=4, sigma=0.1)
    reference = GaussianMeasure.diagonal(np.zeros(4), 1.0)
    map, _ = exact_map(posterior, reference)
    config = TmisConfig(map, reference, 2000, 2.0, seed=10,
                        sampling_reference=GaussianMeasure.diagonal(np.zeros(4), 4.0))
    chain = tmis_sample(posterior, config)
    moved = np.any(chain.samples[1:] != chain.samples[:-1], axis=1)
    assert 0 < chain.accepted < chain.proposed
    assert np.sum(moved) == chain.accepted


def test_tmis_is_reproducible_and_ignores_log_density_constant():
    reference = GaussianMeasure.diagonal(np.zeros(3), 1.0)
    posterior = toy_posterior(d=3, k=3.0)
    shifted = toy_posterior(d=3, k=900.0)
    map, _ = exact_map(posterior, reference)
    for acceptance in ("simplified", "exact"):
        config = TmisConfig(map, reference, 400, 1.5, seed=11, acceptance=acceptance)
        first = tmis_sample(posterior, config)
        np.testing.assert_array_equal(first.samples, tmis_sample(posterior, config).samples)
        np.testing.assert_array_equal(first.samples, tmis_sample(shifted, config).samples)


def blurred_posterior(d=30, sigma=2.0, seed=12):
    """Deconvolution posterior without the FTV term."""
    model = convolution_model(d, 0.02).with_noise(sigma)
    truth = paper_truth("deconvolution", model.grid)
    data = model.apply(truth.values) + sigma * np.random.default_rng(seed).standard_normal(d)
    prior = GaussianMeasure.diagonal(np.zeros(d), 1.0)
    return HierarchicalPosterior(model, data, prior, None, HyperPrior(3.0, 1.0))


def test_tmis_exact_map_on_deconvolution_posterior():
    posterior = blurred_posterior()
    reference = GaussianMeasure.diagonal(np.zeros(30), 1.0)
    map, conjugate = exact_map(posterior, reference)
    config = TmisConfig(map, reference, 100000, 1.0, seed=13, acceptance="exact", burn_in=0)
    chain = tmis_sample(posterior, config)
    assert chain.acceptance_rate > 0.5
    np.testing.assert_allclose(chain.std, conjugate.std, rtol=0.05)
    standard_error = chain.std / np.sqrt(ess_map(chain.samples))
    z = np.abs(chain.mean - conjugate.mean) / standard_error
    assert np.mean(z < 3.0) >= 0.9
    assert np.all(z < 4.0)


def test_tmis_exact_map_on_diagonal_target():
    posterior = toy_posterior(d=30, alpha=None, sigma=0.3, seed=12)
    reference = GaussianMeasure.diagonal(np.zeros(30), 1.0)
    map, conjugate = exact_map(posterior, reference)
    config = TmisConfig(map, reference, 5000, 1.0, seed=13, acceptance="exact")
    chain = tmis_sample(posterior, config)
    # proposal equals the target, every weight is the same
    assert chain.acceptance_rate > 0.999
    standard_error = conjugate.std / np.sqrt(5000)
    assert np.all(np.abs(chain.mean - conjugate.mean) < 4.0 * standard_error)
    np.testing.assert_allclose(chain.std, conjugate.std, rtol=0.05)


def test_tmis_simplified_ratio_with_prior_proposals():
    posterior = blurred_posterior(sigma=4.0)
    prior = posterior.gaussian
    identity = DiagonalMap.identity(30)
    conjugate = conjugate_posterior(posterior.model, prior, posterior.data)
    for acceptance in ("simplified", "exact"):
        chain = tmis_sample(posterior, TmisConfig(identity, prior, 100000, 1.0, seed=17,
                                                  acceptance=acceptance, burn_in=0))
        # proposals are prior draws, so both ratios reduce to the likelihood ratio
        assert chain.acceptance_rate > 0.3
        np.testing.assert_allclose(chain.std, conjugate.std, rtol=0.05)
        standard_error = chain.std / np.sqrt(ess_map(chain.samples))
        assert np.all(np.abs(chain.mean - conjugate.mean) < 4.0 * standard_error)


def test_tmis_acceptance_modes_agree_for_prior_proposals():
    posterior = blurred_posterior(d=10, sigma=1.0)
    prior = posterior.gaussian
    identity = DiagonalMap.identity(10)
    chains = [tmis_sample(posterior, TmisConfig(identity, prior, 500, 1.0, seed=18,
                                                acceptance=acceptance))
              for acceptance in ("simplified", "exact")]
    np.testing.assert_allclose(chains[0].samples, chains[1].samples)


@pytest.mark.slow
def test_tmis_matches_quadrature():
    posterior = toy_posterior(d=2, alpha=1.0, sigma=0.5, seed=14)
    lam = 2.0
    reference = GaussianMeasure.diagonal(np.zeros(2), 1.0)
    map, conjugate = exact_map(posterior, reference)
    config = TmisConfig(map, reference, 100000, lam, seed=15, acceptance="exact")
    chain = tmis_sample(posterior, config)
    states = chain.samples[::10]
    assert quadrature_chi_square(posterior, lam, states, conjugate.mean,
                                 4.0 * conjugate.std) > 0.01

#################################################################
#   Acceptance
#################################################################
def test_log_acceptance_ratio_is_antisymmetric():
    posterior = toy_posterior(d=5, alpha=0.7)
    rng = np.random.default_rng(16)
    for _ in range(50):
        u, v = rng.standard_normal((2, 5))
        forward = log_acceptance_ratio(posterior, 1.3, u, v)
        assert log_acceptance_ratio(posterior, 1.3, v, u) == pytest.approx(-forward)
        probability = acceptance_probability(posterior, 1.3, u, v)
        assert 0.0 <= probability <= 1.0
        assert probability == pytest.approx(min(1.0, np.exp(forward)))


def test_acceptance_uses_exact_ftv():
    posterior = toy_posterior(d=3, alpha=1.0)
    u, v = np.zeros(3), np.array([0.0, 0.0, 1.0])
    assert posterior.ftv(v) > 0.0
    expected = posterior.data_misfit(u) - posterior.data_misfit(v) - 0.5 * 4.0 * posterior.ftv(v)
    assert log_acceptance_ratio(posterior, 4.0, u, v) == pytest.approx(expected)

#################################################################
#   posterior_summary
#################################################################
def test_summary_of_identical_states():
    chain = make_chain(np.tile([1.0, -2.0, 3.0], (5, 1)))
    mean, std = posterior_summary(chain, 0)
    np.testing.assert_array_equal(mean.values, [1.0, -2.0, 3.0])
    np.testing.assert_array_equal(std.values, 0.0)


def test_summary_of_two_states():
    chain = make_chain([[0.0, 2.0], [4.0, 6.0]])
    mean, _ = posterior_summary(chain, 0, grid=Grid.line(2))
    np.testing.assert_allclose(mean.values, [2.0, 4.0])
    assert mean.grid == Grid.line(2)


def test_summary_burn_in():
    chain = make_chain([[100.0], [1.0], [3.0]])
    mean, _ = posterior_summary(chain, 1)
    assert mean.values[0] == pytest.approx(2.0)
    with pytest.raises(ValueError, match="no samples"):
        posterior_summary(chain, 3)

#################################################################
#   Tuning and I/O
#################################################################
def test_tune_pcn_beta_reaches_target_band():
    posterior = toy_posterior(d=4, alpha=None, sigma=0.2)
    beta, rate = tune_pcn_beta(posterior, posterior.gaussian, 1.0, seed=17)
    assert 0.0 < beta <= 1.0
    assert 0.2 <= rate <= 0.3


def test_tune_pcn_beta_on_flat_target():
    prior = GaussianMeasure.diagonal(np.zeros(2), 1.0)
    beta, rate = tune_pcn_beta(FlatPosterior(), prior, 1.0, seed=0, pilot_steps=50)
    assert rate == 1.0
    assert beta > 0.999


def test_chain_io(tmp_path):
    posterior = toy_posterior(d=3)
    chain = pcn_sample(posterior, PcnConfig(beta=0.5, steps=200, prior=posterior.gaussian,
                                            lam=1.0, seed=18, trace_indices=[2]))
    csv_path, sidecar_path = write_chain(chain, tmp_path / "chain.csv")
    assert sidecar_path.name == "chain.json"
    loaded = read_chain(csv_path)
    np.testing.assert_array_equal(loaded.samples, chain.samples)
    np.testing.assert_array_equal(loaded.traces[2], chain.traces[2])
    np.testing.assert_array_equal(loaded.mean, chain.mean)
    assert loaded.acceptance_rate == chain.acceptance_rate
    assert loaded.config["kind"] == "pcn"
    assert loaded.burn_in == 100
