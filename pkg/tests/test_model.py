import numpy as np
import pytest
from scipy import integrate, stats as sps

from shrinkt2.distfn import RngStream, sample_inv_wishart, sample_mvnormal
from shrinkt2.errors import TooFewGenes
from shrinkt2.model import (
    FitConfig,
    GeneSample,
    SimplePrior,
    WishartPrior,
    crossprod_marginal_logpdf,
    fit_simple_prior,
    fit_wishart_prior,
    inv_wishart_logpdf,
    marginal_loglik,
    posterior_cov,
    residual_marginal_logpdf,
    wishart_logpdf,
)


def make_sample(gene_id, obs):
    return GeneSample.from_observations(gene_id, np.asarray(obs, dtype=float))


def generate_dataset(seed, g, d, n, prior, mean=None):
    rng = RngStream(seed, 0)
    mean = np.zeros(d) if mean is None else mean
    samples = []
    for i in range(g):
        sigma = sample_inv_wishart(rng, prior.shape, prior.scale)
        obs = [sample_mvnormal(rng, mean, sigma) for _ in range(n)]
        samples.append(make_sample(f"g{i:05d}", obs))
    return samples


class TestGeneSample:
    def test_summaries(self):
        obs = np.array([[1.0, 2.0], [3.0, 0.0], [5.0, 4.0]])
        s = make_sample("g", obs)
        assert s.n == 3
        assert np.allclose(s.mean, [3.0, 2.0])
        centered = obs - [3.0, 2.0]
        assert np.allclose(s.crossprod, centered.T @ centered)
        assert s.total_ss == pytest.approx(float(np.sum(obs ** 2)))
        assert s.residual_ss == pytest.approx(float(np.trace(s.crossprod)))

    def test_constant_gene_degenerate(self):
        s = make_sample("g", [[1.0, 1.0], [1.0, 1.0], [1.0, 1.0]])
        assert s.degenerate
        assert np.allclose(s.crossprod, 0.0)

    def test_single_replicate_degenerate(self):
        assert make_sample("g", [[1.0, 2.0]]).degenerate


class TestMarginalDensity:
    def test_univariate_matches_quadrature(self):
        # oracle: integrate the Wishart(n-1, sigma) density against the
        # covariance prior numerically
        prior = WishartPrior(scale=[[2.5]], shape=7.0)
        n = 5
        for a in (0.2, 1.0, 3.0, 10.0):

            def integrand(sigma):
                lik = np.exp(wishart_logpdf(np.array([[a]]), n - 1,
                                            np.array([[sigma]])))
                pr = np.exp(inv_wishart_logpdf(np.array([[sigma]]),
                                               prior.shape, prior.scale))
                return lik * pr

            expected, _ = integrate.quad(integrand, 1e-9, 400, limit=300)
            direct = np.exp(
                crossprod_marginal_logpdf(np.array([[a]]), prior, n)
            )
            assert direct == pytest.approx(expected, rel=1e-6)

    @staticmethod
    def _univariate_density_on_grid(prior, n, grid):
        """Vectorized d=1 density anchored to one code evaluation: the grid
        values differ from the anchor only through the analytic powers of A
        and scale+A, so a wrong normalizing constant in the code would make
        the integral miss 1."""
        nu, lam = prior.shape, prior.scale[0, 0]
        anchor = crossprod_marginal_logpdf(np.array([[1.0]]), prior, n)
        log_dens = (
            anchor
            + (n - 3) / 2 * np.log(grid)
            - (nu + n - 3) / 2 * (np.log(lam + grid) - np.log(lam + 1.0))
        )
        return np.exp(log_dens)

    def test_univariate_integrates_to_one(self):
        prior = WishartPrior(scale=[[1.7]], shape=9.0)
        n = 4
        grid = np.linspace(1e-8, 2000, 2_000_001)
        dens = self._univariate_density_on_grid(prior, n, grid)
        total = integrate.trapezoid(dens, grid)
        assert total == pytest.approx(1.0, rel=1e-4)

    def test_univariate_generative_matches_density_cdf(self):
        # sample A generatively, compare against the quadrature CDF of the
        # closed-form marginal
        prior = WishartPrior(scale=[[2.0]], shape=8.0)
        n = 3
        samples = generate_dataset(11, 10**4, 1, n, prior)
        a_draws = np.array([s.crossprod[0, 0] for s in samples])
        grid = np.linspace(1e-8, max(a_draws.max() * 1.5, 50), 400_001)
        pdf = self._univariate_density_on_grid(prior, n, grid)
        cdf = integrate.cumulative_trapezoid(pdf, grid, initial=0.0)
        cdf /= cdf[-1]

        def cdf_fn(x):
            return np.interp(x, grid, cdf)

        ks = sps.kstest(a_draws, cdf_fn).statistic
        assert ks < 0.02

    def test_loglik_excludes_degenerate(self):
        prior = WishartPrior(scale=np.eye(2), shape=8.0)
        good = generate_dataset(12, 20, 2, 3, prior)
        bad = make_sample("flat", [[1.0, 1.0], [1.0, 1.0], [1.0, 1.0]])
        with pytest.warns(UserWarning):
            combined = marginal_loglik(prior, good + [bad])
        assert combined == pytest.approx(marginal_loglik(prior, good))

    def test_permutation_equivariance(self):
        prior = WishartPrior(scale=[[2.0, 0.7], [0.7, 1.1]], shape=9.0)
        samples = generate_dataset(13, 50, 2, 4, prior)
        perm = [1, 0]
        prior_p = WishartPrior(scale=prior.scale[np.ix_(perm, perm)],
                               shape=prior.shape)
        samples_p = [
            GeneSample.from_observations(s.gene_id, s.obs[:, perm])
            for s in samples
        ]
        assert marginal_loglik(prior_p, samples_p) == pytest.approx(
            marginal_loglik(prior, samples), rel=1e-12
        )

    def test_empty(self):
        prior = WishartPrior(scale=np.eye(2), shape=8.0)
        assert marginal_loglik(prior, []) == 0.0


class TestConjugacy:
    def test_identity_prior_likelihood_posterior_marginal(self):
        # executable posterior update: for random (sigma, A, prior, n),
        # log prior + log likelihood == log posterior + log marginal
        rng = np.random.default_rng(3)
        for _ in range(100):
            d = int(rng.integers(1, 4))
            n = int(rng.integers(d + 1, d + 6))
            nu = 2 * d + rng.uniform(0.5, 6)
            b = rng.standard_normal((d, d))
            lam = b @ b.T + d * np.eye(d)
            prior = WishartPrior(scale=lam, shape=nu)
            c = rng.standard_normal((d, d))
            sigma = c @ c.T + 0.5 * np.eye(d)
            e = rng.standard_normal((n - 1, d)) if n > 1 else None
            a = e.T @ e + 0.1 * np.eye(d)
            sample = GeneSample("g", np.zeros((n, d)), n, np.zeros(d), a)
            post = posterior_cov(prior, sample)
            lhs = (wishart_logpdf(a, n - 1, sigma)
                   + inv_wishart_logpdf(sigma, prior.shape, prior.scale))
            rhs = (inv_wishart_logpdf(sigma, post.shape, post.scale)
                   + crossprod_marginal_logpdf(a, prior, n))
            assert lhs == pytest.approx(rhs, abs=1e-8)

    def test_posterior_bookkeeping_no_data(self):
        prior = WishartPrior(scale=[[2.0, 0.3], [0.3, 1.0]], shape=9.0)
        empty = GeneSample("g", np.zeros((1, 2)), 1, np.zeros(2),
                           np.zeros((2, 2)), degenerate=True)
        post = posterior_cov(prior, empty)
        assert np.allclose(post.scale, prior.scale)
        assert post.shape == prior.shape  # n=1 adds n-1 = 0

    def test_posterior_mean_shrinks_toward_prior(self):
        # same sample covariance, different replicate counts: fewer
        # replicates leave the posterior mean nearer the prior mean
        prior = WishartPrior(scale=8.0 * np.eye(2), shape=12.0)
        sample_cov = 40.0 * np.eye(2)
        dists = []
        for n in (2, 20):
            a = sample_cov * (n - 1)
            post = posterior_cov(prior, GeneSample("g", np.zeros((n, 2)), n,
                                                   np.zeros(2), a))
            dists.append(np.linalg.norm(post.mean - prior.mean))
        assert dists[0] < dists[1]


class TestSimpleMarginal:
    def test_integrates_to_one(self):
        prior = SimplePrior(rate=1.3, shape=2.2)
        m = 4
        grid = np.linspace(1e-9, 4000, 4_000_001)
        log_dens = (
            residual_marginal_logpdf(1.0, prior, m)
            - (m / 2 - 1) * 0.0
            + (prior.shape + m / 2) * np.log(2 * prior.rate + 1.0)
            + (m / 2 - 1) * np.log(grid)
            - (prior.shape + m / 2) * np.log(2 * prior.rate + grid)
        )
        total = integrate.trapezoid(np.exp(log_dens), grid)
        assert total == pytest.approx(1.0, rel=1e-4)

    def test_matches_quadrature(self):
        # oracle: integrate sigma^2 chi2_m against the inverse gamma
        prior = SimplePrior(rate=2.0, shape=3.0)
        m = 6
        for r in (0.5, 2.0, 8.0):

            def integrand(s2):
                lik = sps.chi2(m).pdf(r / s2) / s2
                pr = sps.invgamma(prior.shape, scale=prior.rate).pdf(s2)
                return lik * pr

            expected, _ = integrate.quad(integrand, 1e-9, 200, limit=300)
            assert np.exp(residual_marginal_logpdf(r, prior, m)) == \
                pytest.approx(expected, rel=1e-6)


class TestFitWishart:
    def test_too_few_genes(self):
        prior = WishartPrior(scale=np.eye(2), shape=8.0)
        samples = generate_dataset(20, 10, 2, 3, prior)
        with pytest.raises(TooFewGenes):
            fit_wishart_prior(samples, FitConfig(gene_floor=50))

    def test_mle_dominates_truth(self):
        prior = WishartPrior(scale=[[1.8, -0.4], [-0.4, 0.6]], shape=10.0)
        samples = generate_dataset(21, 1500, 2, 3, prior)
        fit = fit_wishart_prior(samples)
        assert fit.converged
        assert fit.loglik >= marginal_loglik(prior, samples) - 1e-6

    def test_duplicated_data_same_optimum(self):
        prior = WishartPrior(scale=[[1.5, 0.3], [0.3, 0.9]], shape=9.0)
        samples = generate_dataset(22, 800, 2, 3, prior)
        fit1 = fit_wishart_prior(samples)
        fit2 = fit_wishart_prior(samples + samples)
        assert fit2.prior.shape == pytest.approx(fit1.prior.shape, rel=1e-3)
        assert np.allclose(fit2.prior.scale, fit1.prior.scale, rtol=1e-3)

    def test_report_invariant(self):
        prior = WishartPrior(scale=np.eye(2), shape=9.0)
        samples = generate_dataset(23, 400, 2, 3, prior)
        fit = fit_wishart_prior(samples)
        if fit.converged:
            assert fit.grad_norm < FitConfig().grad_tol
        assert fit.n_used == 400
        assert fit.iterations > 0


class TestFitSimple:
    def test_recovery(self):
        # generate from the exact inverse-gamma model at reference scale
        rate_true, shape_true = 1.1, 2.4
        rng = np.random.default_rng(9)
        g, d, n = 12625, 2, 3
        sigma2 = sps.invgamma(shape_true, scale=rate_true).rvs(g,
                                                               random_state=rng)
        samples = []
        for i in range(g):
            obs = rng.standard_normal((n, d)) * np.sqrt(sigma2[i])
            samples.append(make_sample(f"g{i:05d}", obs))
        fit = fit_simple_prior(samples)
        assert fit.converged
        assert fit.prior.rate == pytest.approx(rate_true, rel=0.05)
        assert fit.prior.shape == pytest.approx(shape_true, rel=0.05)

    def test_too_few(self):
        with pytest.raises(TooFewGenes):
            fit_simple_prior([make_sample("g", [[1.0, 2.0], [0.0, 1.0]])])


class TestMixedReplicateCounts:
    def test_loglik_matches_per_gene_route(self):
        # grouped stacked evaluation vs direct per-gene densities
        prior = WishartPrior(scale=[[1.4, -0.2], [-0.2, 0.9]], shape=9.5)
        rng_sizes = [3, 4, 5, 3, 6, 4]
        samples = []
        for i, n in enumerate(rng_sizes * 10):
            batch = generate_dataset(100 + i, 1, 2, n, prior)
            samples.extend(batch)
        total = marginal_loglik(prior, samples)
        direct = sum(
            crossprod_marginal_logpdf(s.crossprod, prior, s.n)
            for s in samples
        )
        assert total == pytest.approx(direct, rel=1e-12)

    def test_fit_with_mixed_counts(self):
        prior = WishartPrior(scale=[[1.8, 0.3], [0.3, 1.1]], shape=10.0)
        samples = []
        for i in range(300):
            n = 3 + (i % 3)
            samples.extend(generate_dataset(500 + i, 1, 2, n, prior))
        fit = fit_wishart_prior(samples)
        assert fit.converged
        assert fit.n_used == 300
        # loose recovery sanity at this scale
        assert fit.prior.shape == pytest.approx(prior.shape, rel=0.4)


class TestThreeConditionFit:
    def test_d3_fit_runs_and_recovers_loosely(self):
        prior = WishartPrior(
            scale=np.array([[3.0, 0.5, -0.4],
                            [0.5, 2.0, 0.3],
                            [-0.4, 0.3, 1.5]]),
            shape=14.0,
        )
        samples = generate_dataset(42, 800, 3, 5, prior)
        fit = fit_wishart_prior(samples)
        assert fit.converged
        assert fit.prior.dim == 3
        assert fit.prior.shape == pytest.approx(prior.shape, rel=0.3)
        assert fit.loglik >= marginal_loglik(prior, samples) - 1e-6
