"""Per-gene test statistics, contrast transformation, and p-values.

Four statistics are produced.  The covariance-aware pair:

* ShHT2 - Hotelling-type quadratic form against the shrinkage target
  scale + crossprod; exactly F(r, shape + n - 2r - 1) under the
  hierarchical model, so the borrowed shape shows up as extra
  denominator degrees of freedom.
* HT2 - the classical Hotelling statistic against the per-gene sample
  covariance alone.

And the single-variance pair, which pools every coordinate:

* UT2 - total sum of squares over residual sum of squares.
* ShUT2 - same with the inverse-gamma shrinkage floor in the denominator.

P-values are upper tail for all four.  HT2 and UT2 are scored against the
reference degrees of freedom (r, n-1) and (n d, d(n-1)) that the benchmark
reproduces; the HT2 pair is anti-conservative for r > 1 (the calibrated
choice would be n - r) and the UT2/ShUT2 pair shares its residual term
between numerator and denominator, so their null p-values are not exactly
uniform.  The test suite documents both facts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .distfn import FParams, f_sf
from .errors import (
    DegenerateGene,
    DegreesOfFreedomError,
    DomainError,
    NotPositiveDefinite,
    RankDeficiency,
)
from .matkernel import quadform
from .model import GeneSample, SimplePrior, WishartPrior

NAMED_CONTRASTS = ("zero.means", "equal.means", "no.trend")


class Method(str, Enum):
    SH_HT2 = "ShHT2"
    HT2 = "HT2"
    SH_UT2 = "ShUT2"
    UT2 = "UT2"


@dataclass
class Contrast:
    """A q x d linear hypothesis matrix of row rank r."""

    matrix: np.ndarray
    rank: int
    name: str = "custom"

    def __post_init__(self):
        self.matrix = np.atleast_2d(np.asarray(self.matrix, dtype=float))
        sv = np.linalg.svd(self.matrix, compute_uv=False)
        numeric_rank = int(np.sum(sv > 1e-10 * sv[0]))
        if numeric_rank != self.rank:
            raise RankDeficiency(
                f"declared rank {self.rank} but numeric rank {numeric_rank}"
            )

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def reduced(self) -> np.ndarray:
        """An r-row full-rank subset of the rows (rows beyond the rank
        are linearly dependent and would make M scale M' singular)."""
        if self.matrix.shape[0] == self.rank:
            return self.matrix
        rows, kept = [], []
        for row in self.matrix:
            trial = np.array(kept + [row])
            if np.linalg.matrix_rank(trial, tol=1e-10) > len(kept):
                kept.append(row)
                rows.append(row)
            if len(kept) == self.rank:
                break
        return np.array(rows)


@dataclass
class TestResult:
    __test__ = False  # not a pytest class, despite the name

    gene_id: str
    statistic: float
    df1: float
    df2: float
    pvalue: float
    method: Method
    ok: bool = True
    note: str = ""

    @classmethod
    def not_applicable(cls, gene_id: str, method: Method, note: str) -> "TestResult":
        return cls(gene_id, math.nan, math.nan, math.nan, math.nan,
                   method, ok=False, note=note)


def make_contrast(name: str, d: int) -> Contrast:
    """One of the three named hypothesis matrices.

    zero.means   : identity, q = r = d.
    equal.means  : (d-1) x d orthonormal basis of the complement of the
                   ones vector (Helmert rows), q = r = d - 1.
    no.trend     : the slope row of the regression of each coordinate on
                   0..d-1, q = r = 1; needs d > 2 to be meaningful.
    """
    if d < 1:
        raise DomainError("dimension must be >= 1")
    if name == "zero.means":
        return Contrast(np.eye(d), rank=d, name=name)
    if name == "equal.means":
        if d < 2:
            raise DomainError("equal.means needs d >= 2")
        rows = np.zeros((d - 1, d))
        for j in range(1, d):
            rows[j - 1, :j] = 1.0
            rows[j - 1, j] = -j
            rows[j - 1] /= np.sqrt(j * (j + 1))
        return Contrast(rows, rank=d - 1, name=name)
    if name == "no.trend":
        if d <= 2:
            raise DomainError("no.trend needs d > 2")
        u = np.column_stack([np.ones(d), np.arange(d, dtype=float)])
        slope_row = np.linalg.solve(u.T @ u, u.T)[1]
        return Contrast(slope_row[None, :], rank=1, name=name)
    raise DomainError(f"unknown contrast name {name!r}")


def apply_contrast(sample: GeneSample, prior: WishartPrior | None,
                   contrast: Contrast):
    """Transform a gene (and optionally a prior) into contrast coordinates.

    mean -> M mean, crossprod -> M crossprod M', scale -> M scale M', and
    the effective dimension becomes the contrast rank.  When the contrast
    has more rows than its rank, a full-rank row subset is used so the
    transformed scale stays invertible.
    """
    m = contrast.reduced()
    if m.shape[1] != sample.dim:
        raise DomainError(
            f"contrast has {m.shape[1]} columns but data dimension is {sample.dim}"
        )
    obs_t = sample.obs @ m.T
    transformed = GeneSample.from_observations(sample.gene_id, obs_t)
    if prior is None:
        return transformed, None
    if prior.dim != sample.dim:
        raise DomainError("prior dimension does not match the data")
    scale_t = m @ prior.scale @ m.T
    return transformed, WishartPrior(scale=(scale_t + scale_t.T) / 2,
                                     shape=prior.shape)


def sh_ht2(sample: GeneSample, prior: WishartPrior,
           contrast: Contrast | None = None) -> TestResult:
    """Shrinkage-covariance Hotelling statistic.

    statistic = (shape + n - 2r - 1)/r * n * mean'(scale + crossprod)^{-1} mean
    with df (r, shape + n - 2r - 1); exact central F under the null.
    """
    if contrast is not None:
        sample, prior = apply_contrast(sample, prior, contrast)
    r = sample.dim
    n = sample.n
    df2 = prior.shape + n - 2 * r - 1
    if df2 <= 0:
        raise DegreesOfFreedomError(
            f"shape + n - 2r - 1 = {df2} <= 0 for gene {sample.gene_id}"
        )
    t2 = n * quadform(sample.mean, prior.scale + sample.crossprod)
    stat = df2 / r * t2
    p = f_sf(stat, FParams(r, df2))
    return TestResult(sample.gene_id, float(stat), float(r), float(df2),
                      p, Method.SH_HT2)


def ht2(sample: GeneSample, contrast: Contrast | None = None) -> TestResult:
    """Classical Hotelling statistic against the per-gene covariance.

    statistic = (n - r)/r * n/(n - 1) * mean' S^{-1} mean, scored against
    F(r, n - 1): the reference degrees of freedom reproduced by the
    benchmark (the exact-null choice would be n - r; see module notes).
    """
    if contrast is not None:
        sample, _ = apply_contrast(sample, None, contrast)
    r, n = sample.dim, sample.n
    if n <= r:
        return TestResult.not_applicable(
            sample.gene_id, Method.HT2, f"needs n > r, got n={n}, r={r}"
        )
    if sample.degenerate:
        return TestResult.not_applicable(
            sample.gene_id, Method.HT2, "singular sample covariance"
        )
    try:
        # mean' S^{-1} mean = (n-1) * mean' crossprod^{-1} mean
        stat = (n - r) / r * n * quadform(sample.mean, sample.crossprod)
    except NotPositiveDefinite:
        return TestResult.not_applicable(
            sample.gene_id, Method.HT2, "singular sample covariance"
        )
    df1, df2 = float(r), float(n - 1)
    p = f_sf(stat, FParams(df1, df2))
    return TestResult(sample.gene_id, float(stat), df1, df2, p, Method.HT2)


def ut2(sample: GeneSample) -> TestResult:
    """Pooled-variance ratio statistic.

    statistic = d(n-1)/(n d) * total_ss / residual_ss with the reference
    degrees of freedom (n d, d(n-1)).
    """
    d, n = sample.dim, sample.n
    if n < 2:
        return TestResult.not_applicable(sample.gene_id, Method.UT2,
                                         "needs at least 2 replicates")
    r_g = sample.residual_ss
    if r_g <= 0:
        return TestResult.not_applicable(sample.gene_id, Method.UT2,
                                         "zero residual sum of squares")
    stat = d * (n - 1) / (n * d) * sample.total_ss / r_g
    df1, df2 = float(n * d), float(d * (n - 1))
    p = f_sf(stat, FParams(df1, df2))
    return TestResult(sample.gene_id, float(stat), df1, df2, p, Method.UT2)


def sh_ut2(sample: GeneSample, prior: SimplePrior) -> TestResult:
    """Shrunken pooled-variance statistic.

    statistic = (2 shape + d(n-1))/(n d) * total_ss / (2 rate + residual_ss)
    with df (n d, 2 shape + d(n-1)).  At rate = shape = 0 this reduces
    exactly to the unshrunken statistic.
    """
    d, n = sample.dim, sample.n
    if n < 2:
        return TestResult.not_applicable(sample.gene_id, Method.SH_UT2,
                                         "needs at least 2 replicates")
    denom = 2 * prior.rate + sample.residual_ss
    if denom <= 0:
        return TestResult.not_applicable(sample.gene_id, Method.SH_UT2,
                                         "zero shrunken denominator")
    df2 = 2 * prior.shape + d * (n - 1)
    stat = df2 / (n * d) * sample.total_ss / denom
    p = f_sf(stat, FParams(n * d, df2))
    return TestResult(sample.gene_id, float(stat), float(n * d), float(df2),
                      p, Method.SH_UT2)


def _is_identity(contrast: Contrast | None) -> bool:
    if contrast is None:
        return True
    m = contrast.matrix
    return m.shape[0] == m.shape[1] and np.allclose(m, np.eye(m.shape[0]))


def run_tests(samples, method: Method, contrast: Contrast | None = None,
              prior=None) -> list[TestResult]:
    """Score every gene with one method, in input order.

    The contrast (if any) is applied once up front -- to the prior as well
    for the covariance-aware methods.  Genes a method cannot score come
    back flagged not-applicable so ranked lists stay aligned across
    methods.
    """
    method = Method(method)
    samples = list(samples)
    prior_t = prior
    if not _is_identity(contrast):
        if isinstance(prior, WishartPrior):
            m = contrast.reduced()
            scale_t = m @ prior.scale @ m.T
            prior_t = WishartPrior(scale=(scale_t + scale_t.T) / 2,
                                   shape=prior.shape)
        samples = [apply_contrast(s, None, contrast)[0] for s in samples]

    results = []
    for s in samples:
        try:
            if method is Method.SH_HT2:
                if not isinstance(prior_t, WishartPrior):
                    raise DomainError("ShHT2 needs a fitted covariance prior")
                results.append(sh_ht2(s, prior_t))
            elif method is Method.HT2:
                results.append(ht2(s))
            elif method is Method.SH_UT2:
                if not isinstance(prior_t, SimplePrior):
                    raise DomainError("ShUT2 needs a fitted simple prior")
                results.append(sh_ut2(s, prior_t))
            else:
                results.append(ut2(s))
        except (DegenerateGene, DegreesOfFreedomError, NotPositiveDefinite) as exc:
            results.append(TestResult.not_applicable(s.gene_id, method, str(exc)))
    return results
