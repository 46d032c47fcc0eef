"""Special functions, F-distribution CDFs/quantiles, and random samplers.

The random stream is a counter-based Philox generator addressed by an
explicit (seed, stream) pair, so independent streams can be handed to
independent units of work and the draws never depend on scheduling order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize
from scipy.special import betainc, gammaln

from .errors import DomainError, NotPositiveDefinite
from .matkernel import cholesky, spd_inverse

# Poisson-mixture truncation for the noncentral F series.
_NCF_TAIL = 1e-12
_NCF_MAX_TERMS = 100_000


@dataclass
class FParams:
    """Degrees of freedom and noncentrality of an F distribution."""

    df1: float
    df2: float
    noncentrality: float = 0.0

    def __post_init__(self):
        if self.df1 <= 0 or self.df2 <= 0:
            raise DomainError("degrees of freedom must be positive")
        if self.noncentrality < 0:
            raise DomainError("noncentrality must be >= 0")


@dataclass
class RngStream:
    """Deterministic random stream addressed by (seed, stream).

    The same (seed, stream) pair always reproduces the same sequence,
    independently of platform and of any other stream.
    """

    seed: int
    stream: int = 0
    _gen: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        key = ((int(self.stream) & 0xFFFFFFFFFFFFFFFF) << 64) | (
            int(self.seed) & 0xFFFFFFFFFFFFFFFF
        )
        self._gen = np.random.Generator(np.random.Philox(key=key))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def substream(self, stream: int) -> "RngStream":
        """A fresh independent stream under the same seed."""
        return RngStream(self.seed, stream)


def ln_multigamma(d: int, a: float) -> float:
    """Log of the d-dimensional multivariate gamma function.

    ln Gamma_d(a) = d(d-1)/4 log(pi) + sum_{j=1..d} ln Gamma(a - (j-1)/2),
    defined for a > (d-1)/2.
    """
    if d < 1 or int(d) != d:
        raise DomainError("dimension must be a positive integer")
    if a <= (d - 1) / 2:
        raise DomainError(f"ln_multigamma requires a > (d-1)/2, got a={a}, d={d}")
    j = np.arange(1, d + 1)
    return float(d * (d - 1) / 4 * np.log(np.pi) + np.sum(gammaln(a - (j - 1) / 2)))


def f_cdf(x: float, p: FParams) -> float:
    """CDF of the (possibly noncentral) F distribution.

    The central case is the regularized incomplete beta.  The noncentral
    case is the Poisson(lambda/2)-weighted series of incomplete-beta
    terms, truncated once the unaccumulated Poisson mass drops below
    1e-12 (capped at 1e5 terms; noncentralities here are moderate).
    """
    if x <= 0:
        return 0.0
    y = p.df1 * x / (p.df1 * x + p.df2)
    lam = p.noncentrality
    if lam == 0.0:
        return float(betainc(p.df1 / 2, p.df2 / 2, y))
    half = lam / 2.0
    total = 0.0
    log_weight = -half  # log Poisson pmf at j=0
    cum_mass = 0.0
    for j in range(_NCF_MAX_TERMS):
        w = np.exp(log_weight)
        total += w * betainc(p.df1 / 2 + j, p.df2 / 2, y)
        cum_mass += w
        if 1.0 - cum_mass < _NCF_TAIL:
            break
        log_weight += np.log(half) - np.log(j + 1)
    return float(min(1.0, max(0.0, total)))


def f_sf(x: float, p: FParams) -> float:
    """Upper tail of the F distribution.

    Central case only; uses the complementary incomplete-beta identity so
    tiny tail probabilities keep full precision instead of cancelling
    against 1.
    """
    if p.noncentrality != 0.0:
        return 1.0 - f_cdf(x, p)
    if x <= 0:
        return 1.0
    y = p.df2 / (p.df1 * x + p.df2)
    return float(betainc(p.df2 / 2, p.df1 / 2, y))


def f_quantile(prob: float, p: FParams) -> float:
    """Inverse central-F CDF by bracketed root finding on f_cdf."""
    if not 0.0 < prob < 1.0:
        raise DomainError("quantile probability must lie in (0, 1)")
    if p.noncentrality != 0.0:
        raise DomainError("f_quantile is defined for the central case only")
    hi = 1.0
    while f_cdf(hi, p) < prob:
        hi *= 2.0
        if hi > 1e12:
            raise DomainError("quantile bracket failed to close")
    return float(optimize.brentq(lambda x: f_cdf(x, p) - prob, 0.0, hi, xtol=1e-12))


def sample_std_normal(rng: RngStream, count: int) -> np.ndarray:
    """i.i.d. standard normal draws from the stream."""
    return rng.generator.standard_normal(count)


def sample_wishart(rng: RngStream, df: float, scale) -> np.ndarray:
    """One Wishart draw via the Bartlett construction.

    W = L T T' L' with L = chol(scale) and T lower triangular whose
    squared diagonals are chi-square with df, df-1, ... degrees of
    freedom and whose subdiagonals are standard normal.
    """
    scale = np.asarray(scale, dtype=float)
    d = scale.shape[0]
    if df <= d - 1:
        raise DomainError(f"Wishart df must exceed d-1 = {d - 1}, got {df}")
    L = cholesky(scale)
    gen = rng.generator
    T = np.zeros((d, d))
    T[np.diag_indices(d)] = np.sqrt(gen.chisquare(df - np.arange(d)))
    if d > 1:
        T[np.tril_indices(d, -1)] = gen.standard_normal(d * (d - 1) // 2)
    LT = L @ T
    w = LT @ LT.T
    return (w + w.T) / 2.0


def sample_inv_wishart(rng: RngStream, nu: float, lam) -> np.ndarray:
    """One inverse-Wishart draw under the (nu, lam) convention used here:
    the inverse of the draw is Wishart with nu - d - 1 degrees of freedom
    and scale lam^{-1}, so the draw's mean is lam / (nu - 2d - 2)."""
    lam = np.asarray(lam, dtype=float)
    d = lam.shape[0]
    if nu <= 2 * d:
        raise DomainError(f"inverse-Wishart shape must exceed 2d = {2 * d}, got {nu}")
    return spd_inverse(sample_wishart(rng, nu - d - 1, spd_inverse(lam)))


def sample_mvnormal(rng: RngStream, mean, cov) -> np.ndarray:
    """One multivariate normal draw: mean + chol(cov) z."""
    mean = np.asarray(mean, dtype=float)
    L = cholesky(cov)
    if mean.shape != (L.shape[0],):
        raise NotPositiveDefinite("mean and covariance dimensions disagree")
    return mean + L @ rng.generator.standard_normal(L.shape[0])
