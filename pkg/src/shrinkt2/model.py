"""Hierarchical covariance model and empirical-Bayes prior fitting.

Per gene g we observe n_g replicate d-vectors.  Conditional on a gene-level
covariance the replicates are i.i.d. multivariate normal, and the gene-level
covariances are i.i.d. inverse Wishart across genes.  Integrating the
covariance out gives a closed-form marginal density for each gene's centered
cross-product matrix; summing its log over genes is the objective maximized
to estimate the prior hyperparameters.

Conventions (pinned once, used everywhere):

* ``WishartPrior(scale, shape)`` describes the inverse-Wishart law whose
  draws S satisfy S^{-1} ~ Wishart(shape - d - 1, scale^{-1}); its mean is
  scale / (shape - 2d - 2).
* ``SimplePrior(rate, shape)`` describes sigma^2 ~ InvGamma(shape, rate)
  (density ~ x^{-shape-1} exp(-rate/x)), the single-variance analogue.
  This is the unique convention that makes the moderated univariate
  statistic exactly F distributed with 2*shape extra denominator
  degrees of freedom.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize
from scipy.special import gammaln

from .distfn import ln_multigamma
from .errors import DegenerateGene, DomainError, NotPositiveDefinite, TooFewGenes
from .matkernel import cholesky, logdet, spd_inverse


# ---------------------------------------------------------------------------
# domain types


@dataclass
class GeneSample:
    """One gene's complete-case replicate matrix and its summaries.

    obs is the n x d matrix of complete replicate rows; mean is the column
    average; crossprod is the centered cross-product sum(y - mean)(y - mean)',
    i.e. (n - 1) times the unbiased sample covariance.
    """

    gene_id: str
    obs: np.ndarray
    n: int
    mean: np.ndarray
    crossprod: np.ndarray
    degenerate: bool = False

    @classmethod
    def from_observations(cls, gene_id: str, obs) -> "GeneSample":
        obs = np.atleast_2d(np.asarray(obs, dtype=float))
        n = obs.shape[0]
        if n == 0:
            d = obs.shape[1] if obs.ndim == 2 else 0
            return cls(gene_id, obs.reshape(0, d), 0, np.zeros(d),
                       np.zeros((d, d)), degenerate=True)
        mean = obs.mean(axis=0)
        centered = obs - mean
        # two-pass form: center first, then accumulate outer products
        crossprod = centered.T @ centered
        crossprod = (crossprod + crossprod.T) / 2.0
        degenerate = n < 2
        if not degenerate:
            try:
                cholesky(crossprod)
            except NotPositiveDefinite:
                degenerate = True
        return cls(gene_id, obs, n, mean, crossprod, degenerate)

    @property
    def dim(self) -> int:
        return self.obs.shape[1]

    @property
    def total_ss(self) -> float:
        """Sum of squares of every observation entry (uncentered)."""
        return float(np.sum(self.obs ** 2))

    @property
    def residual_ss(self) -> float:
        """trace of the centered cross-product."""
        return float(np.trace(self.crossprod))


@dataclass
class WishartPrior:
    """Inverse-Wishart hyperparameters: scale matrix and scalar shape."""

    scale: np.ndarray
    shape: float

    def __post_init__(self):
        self.scale = np.asarray(self.scale, dtype=float)
        cholesky(self.scale)  # must be SPD
        self.shape = float(self.shape)

    @property
    def dim(self) -> int:
        return self.scale.shape[0]

    @property
    def mean(self) -> np.ndarray:
        """Prior mean of the gene-level covariance, scale/(shape-2d-2)."""
        denom = self.shape - 2 * self.dim - 2
        if denom <= 0:
            raise DomainError("prior mean requires shape > 2d + 2")
        return self.scale / denom


@dataclass
class SimplePrior:
    """Inverse-gamma hyperparameters for the single-variance model."""

    rate: float
    shape: float

    def __post_init__(self):
        if self.rate < 0 or self.shape < 0:
            raise DomainError("rate and shape must be nonnegative")


@dataclass
class FitConfig:
    max_iter: int = 500
    rel_tol: float = 1e-9
    step_tol: float = 1e-7
    grad_tol: float = 0.5
    gene_floor: int = 50


@dataclass
class FitReport:
    prior: object
    loglik: float
    iterations: int
    converged: bool
    grad_norm: float
    n_used: int = 0
    excluded: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# log densities


def wishart_logpdf(a, df: float, scale) -> float:
    """Log density of Wishart(df, scale) at the SPD matrix a."""
    a = np.asarray(a, dtype=float)
    d = a.shape[0]
    if df <= d - 1:
        raise DomainError("Wishart density needs df > d - 1")
    return (
        -ln_multigamma(d, df / 2)
        - d * df / 2 * np.log(2.0)
        - df / 2 * logdet(scale)
        + (df - d - 1) / 2 * logdet(a)
        - 0.5 * float(np.trace(spd_inverse(scale) @ a))
    )


def inv_wishart_logpdf(s, nu: float, lam) -> float:
    """Log density of the inverse Wishart under the (nu, lam) convention."""
    s = np.asarray(s, dtype=float)
    d = s.shape[0]
    if nu <= 2 * d:
        raise DomainError("inverse-Wishart density needs shape > 2d")
    m = nu - d - 1
    return (
        -ln_multigamma(d, m / 2)
        - d * m / 2 * np.log(2.0)
        + m / 2 * logdet(lam)
        - nu / 2 * logdet(s)
        - 0.5 * float(np.trace(spd_inverse(s) @ np.asarray(lam, dtype=float)))
    )


def crossprod_marginal_logpdf(a, prior: WishartPrior, n: int) -> float:
    """Log marginal density of a gene's centered cross-product matrix.

    This is the Wishart likelihood with the inverse-Wishart covariance
    integrated out; it exists when n > d and shape > 2d.
    """
    a = np.asarray(a, dtype=float)
    d = a.shape[0]
    nu = prior.shape
    if n <= d:
        raise DegenerateGene("marginal density needs n > d")
    if nu <= 2 * d:
        raise DomainError("marginal density needs shape > 2d")
    return (
        ln_multigamma(d, (nu + n - d - 2) / 2)
        - ln_multigamma(d, (n - 1) / 2)
        - ln_multigamma(d, (nu - d - 1) / 2)
        + (nu - d - 1) / 2 * logdet(prior.scale)
        + (n - d - 2) / 2 * logdet(a)
        - (nu + n - d - 2) / 2 * logdet(prior.scale + a)
    )


def residual_marginal_logpdf(r: float, prior: SimplePrior, m: float) -> float:
    """Log marginal density of a residual sum of squares with m df.

    Integrates sigma^2 chi^2_m against InvGamma(shape, rate):
    f(r) = Gamma(s + m/2) / (Gamma(s) Gamma(m/2))
           * (2 rate)^s * r^(m/2 - 1) / (2 rate + r)^(s + m/2).
    """
    if r <= 0:
        raise DegenerateGene("residual sum of squares must be positive")
    if prior.rate <= 0 or prior.shape <= 0:
        raise DomainError("marginal density needs positive rate and shape")
    s, rate = prior.shape, prior.rate
    return float(
        gammaln(s + m / 2)
        - gammaln(s)
        - gammaln(m / 2)
        + s * np.log(2 * rate)
        + (m / 2 - 1) * np.log(r)
        - (s + m / 2) * np.log(2 * rate + r)
    )


def posterior_cov(prior: WishartPrior, sample: GeneSample) -> WishartPrior:
    """Posterior hyperparameters after observing one gene's cross-product."""
    return WishartPrior(scale=prior.scale + sample.crossprod,
                        shape=prior.shape + sample.n - 1)


# ---------------------------------------------------------------------------
# stacked evaluation (the fit objective touches ~10^4 genes per call)


class _GeneStack:
    """Column-stacked per-gene summaries grouped by replicate count."""

    def __init__(self, samples, d: int):
        self.d = d
        usable, excluded = [], []
        for s in samples:
            if s.dim != d:
                raise DomainError("all genes must share the same dimension")
            if s.degenerate or s.n <= d:
                excluded.append(s.gene_id)
            else:
                usable.append(s)
        self.excluded = excluded
        self.n_used = len(usable)
        if not usable:
            self.groups = []
            return
        ns = np.array([s.n for s in usable])
        crossprods = np.stack([s.crossprod for s in usable])
        # batched Cholesky log-determinants of the A_g
        chol = np.linalg.cholesky(crossprods)
        ld_a = 2.0 * np.sum(np.log(np.diagonal(chol, axis1=1, axis2=2)), axis=1)
        self.groups = []
        for n in np.unique(ns):
            idx = ns == n
            self.groups.append((int(n), crossprods[idx], ld_a[idx]))

    def loglik(self, lam: np.ndarray, ld_lam: float, nu: float) -> float:
        d = self.d
        total = 0.0
        for n, a, ld_a in self.groups:
            g = len(ld_a)
            shifted = lam[None, :, :] + a
            chol = np.linalg.cholesky(shifted)
            ld_shift = 2.0 * np.sum(
                np.log(np.diagonal(chol, axis1=1, axis2=2)), axis=1
            )
            total += g * (
                ln_multigamma(d, (nu + n - d - 2) / 2)
                - ln_multigamma(d, (n - 1) / 2)
                - ln_multigamma(d, (nu - d - 1) / 2)
                + (nu - d - 1) / 2 * ld_lam
            )
            total += (n - d - 2) / 2 * float(np.sum(ld_a))
            total -= (nu + n - d - 2) / 2 * float(np.sum(ld_shift))
        return total


def marginal_loglik(prior: WishartPrior, samples) -> float:
    """Sum of log marginal densities over all usable genes.

    Genes whose cross-product fails Cholesky (or with n <= d) carry no
    marginal density; they are excluded from the sum, not fatal.
    """
    samples = list(samples)
    if not samples:
        return 0.0
    stack = _GeneStack(samples, prior.dim)
    if stack.excluded:
        warnings.warn(
            f"{len(stack.excluded)} degenerate gene(s) excluded from the "
            "marginal log-likelihood",
            stacklevel=2,
        )
    if stack.n_used == 0:
        return 0.0
    return stack.loglik(prior.scale, logdet(prior.scale), prior.shape)


# ---------------------------------------------------------------------------
# fitting


def _pack_wishart(lam: np.ndarray, nu: float, d: int) -> np.ndarray:
    L = cholesky(lam)
    params = [np.log(L[i, i]) for i in range(d)]
    params += [L[i, j] for i in range(1, d) for j in range(i)]
    params.append(np.log(nu - 2 * d))
    return np.array(params)


def _unpack_wishart(params: np.ndarray, d: int):
    L = np.zeros((d, d))
    for i in range(d):
        L[i, i] = np.exp(params[i])
    k = d
    for i in range(1, d):
        for j in range(i):
            L[i, j] = params[k]
            k += 1
    nu = 2 * d + np.exp(params[-1])
    lam = L @ L.T
    ld_lam = 2.0 * float(np.sum(params[:d]))
    return lam, ld_lam, nu


def _fd_grad_norm(fun, x: np.ndarray, rel_step: float = 1e-5) -> float:
    """Infinity norm of a central finite-difference gradient."""
    g = np.zeros_like(x)
    for i in range(len(x)):
        h = rel_step * max(1.0, abs(x[i]))
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (fun(x + e) - fun(x - e)) / (2 * h)
    return float(np.max(np.abs(g)))


def _minimize(nll, x0: np.ndarray, config: FitConfig):
    f0 = nll(x0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = optimize.minimize(
            nll,
            x0,
            method="Nelder-Mead",
            options={
                "maxiter": config.max_iter,
                "xatol": config.step_tol,
                "fatol": config.rel_tol * (1 + abs(f0)),
                "adaptive": True,
            },
        )
        polish = optimize.minimize(
            nll, res.x, method="L-BFGS-B", jac="3-point",
            options={"maxiter": config.max_iter},
        )
    best = polish if polish.fun <= res.fun else res
    iterations = int(res.nit + polish.nit)
    grad_norm = _fd_grad_norm(nll, best.x)
    converged = bool(res.success or polish.success) and grad_norm < config.grad_tol
    return best.x, -float(best.fun), iterations, converged, grad_norm


def fit_wishart_prior(samples, config: FitConfig | None = None) -> FitReport:
    """Maximum-likelihood fit of the inverse-Wishart hyperparameters.

    Optimizes over an unconstrained parameterization (Cholesky factor of
    the scale with log diagonal; shape = 2d + exp(t)) with a Nelder-Mead
    pass polished by quasi-Newton with central finite differences.
    """
    config = config or FitConfig()
    samples = list(samples)
    if not samples:
        raise TooFewGenes("no genes supplied")
    d = samples[0].dim
    stack = _GeneStack(samples, d)
    if stack.n_used < config.gene_floor:
        raise TooFewGenes(
            f"{stack.n_used} usable genes < floor of {config.gene_floor}"
        )

    # moment-matched start: scale = (shape0 - 2d - 2) * mean sample covariance
    nu0 = 2 * d + 4.0
    mean_cov = np.mean(
        [s.crossprod / (s.n - 1) for s in samples
         if not s.degenerate and s.n > d],
        axis=0,
    )
    try:
        cholesky(mean_cov)
        lam0 = (nu0 - 2 * d - 2) * mean_cov
    except NotPositiveDefinite:
        lam0 = (nu0 - 2 * d - 2) * np.diag(np.diag(mean_cov))
    x0 = _pack_wishart(lam0, nu0, d)

    def nll(params):
        nu_free = params[-1]
        if not np.isfinite(nu_free) or np.exp(nu_free) < 1e-6:
            return np.inf
        with np.errstate(over="ignore", invalid="ignore"):
            try:
                lam, ld_lam, nu = _unpack_wishart(params, d)
                value = stack.loglik(lam, ld_lam, nu)
            except (FloatingPointError, np.linalg.LinAlgError, DomainError):
                return np.inf
        return -value if np.isfinite(value) else np.inf

    x, loglik, iterations, converged, grad_norm = _minimize(nll, x0, config)
    lam, _, nu = _unpack_wishart(x, d)
    prior = WishartPrior(scale=lam, shape=nu)
    return FitReport(prior, loglik, iterations, converged, grad_norm,
                     n_used=stack.n_used, excluded=stack.excluded)


def fit_simple_prior(samples, config: FitConfig | None = None) -> FitReport:
    """Maximum-likelihood fit of the inverse-gamma hyperparameters.

    Works on the per-gene residual scalars trace(crossprod) with
    d * (n_g - 1) degrees of freedom.
    """
    config = config or FitConfig()
    samples = list(samples)
    if not samples:
        raise TooFewGenes("no genes supplied")
    usable, excluded = [], []
    for s in samples:
        if s.n >= 2 and s.residual_ss > 0:
            usable.append(s)
        else:
            excluded.append(s.gene_id)
    if len(usable) < config.gene_floor:
        raise TooFewGenes(f"{len(usable)} usable genes < floor of {config.gene_floor}")
    r_vals = np.array([s.residual_ss for s in usable])
    m_vals = np.array([s.dim * (s.n - 1) for s in usable], dtype=float)
    log_r = np.log(r_vals)

    def nll(params):
        with np.errstate(over="ignore", invalid="ignore"):
            rate, shape = np.exp(params)
            if not np.isfinite(rate) or not np.isfinite(shape):
                return np.inf
            value = np.sum(
                gammaln(shape + m_vals / 2)
                - gammaln(shape)
                - gammaln(m_vals / 2)
                + shape * np.log(2 * rate)
                + (m_vals / 2 - 1) * log_r
                - (shape + m_vals / 2) * np.log(2 * rate + r_vals)
            )
        return -float(value) if np.isfinite(value) else np.inf

    x0 = np.log([float(np.mean(r_vals / m_vals)), 2.0])
    x, loglik, iterations, converged, grad_norm = _minimize(nll, x0, config)
    rate, shape = np.exp(x)
    prior = SimplePrior(rate=float(rate), shape=float(shape))
    return FitReport(prior, loglik, iterations, converged, grad_norm,
                     n_used=len(usable), excluded=excluded)
