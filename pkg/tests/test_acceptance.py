"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -v -s` to see the lines as they
complete.  Criterion 5 is expected to fail: its stated arguments embed a
misprinted per-test error rate (0.0026 where the computation behind the
reference value used 0.26); see the criterion's message and the project
notes.  Everything else passes at the stated tolerances.
"""

import time

import numpy as np
import pytest
from scipy import stats as sps

from shrinkt2 import sim
from shrinkt2.distfn import RngStream, sample_inv_wishart
from shrinkt2.model import (
    GeneSample,
    SimplePrior,
    WishartPrior,
    crossprod_marginal_logpdf,
    fit_wishart_prior,
    inv_wishart_logpdf,
    posterior_cov,
    wishart_logpdf,
)
from shrinkt2.multiplicity import bh_select
from shrinkt2.stats import Method, ht2, make_contrast, run_tests, sh_ht2, sh_ut2, ut2


def _report(num, desc, ok, detail=""):
    line = f"ACCEPTANCE {num} ({desc}): {'PASS' if ok else 'FAIL'}"
    if detail:
        line += f"  [{detail}]"
    print(line)
    assert ok, line


@pytest.fixture(scope="module")
def model_summary():
    """Shared 10-replicate benchmark at the shipped defaults."""
    config = sim.default_model_config(sim_replicates=10)
    start = time.perf_counter()
    summary = sim.run_benchmark(config)
    elapsed = time.perf_counter() - start
    return summary, elapsed


def test_criterion_1_null_calibration():
    start = time.perf_counter()
    prior = sim.surrogate_prior()
    config = sim.default_model_config(genes=5000, true_positives=0,
                                      effect=0.0, seed=0)
    samples, _ = sim.gen_model_dataset(config, RngStream(0, 0))
    results = run_tests(samples, Method.SH_HT2, prior=prior)
    pvals = [r.pvalue for r in results if r.ok]
    ks = sps.kstest(pvals, "uniform").statistic
    elapsed = time.perf_counter() - start
    _report(1, "null p-values uniform", ks < 0.02 and elapsed < 30,
            f"KS={ks:.4f}, {elapsed:.1f}s")


def test_criterion_2_reduction_identities():
    rng = np.random.default_rng(42)
    d = 2
    tiny = WishartPrior(scale=1e-12 * np.eye(d), shape=d + 1.0)
    zero_simple = SimplePrior(rate=0.0, shape=0.0)
    contrast = make_contrast("zero.means", d)
    max_rel = 0.0
    exact = True
    for i in range(1000):
        n = int(rng.integers(d + 1, d + 5))
        obs = rng.standard_normal((n, d)) * rng.uniform(0.2, 3) + rng.normal()
        s = GeneSample.from_observations(str(i), obs)
        a = sh_ht2(s, tiny, contrast).statistic
        b = ht2(s, contrast).statistic
        max_rel = max(max_rel, abs(a - b) / abs(b))
        r1, r2 = sh_ut2(s, zero_simple), ut2(s)
        exact = exact and r1.statistic == r2.statistic and r1.pvalue == r2.pvalue
    _report(2, "vanishing-prior reductions", max_rel < 1e-6 and exact,
            f"max rel diff={max_rel:.2e}")


def test_criterion_3_conjugacy_identity():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(100):
        d = int(rng.integers(1, 4))
        n = int(rng.integers(d + 1, d + 6))
        nu = 2 * d + rng.uniform(0.5, 8)
        b = rng.standard_normal((d, d))
        lam = b @ b.T + d * np.eye(d)
        c = rng.standard_normal((d, d))
        sigma = c @ c.T + 0.5 * np.eye(d)
        e = rng.standard_normal((n - 1, d))
        a = e.T @ e + 0.1 * np.eye(d)
        prior = WishartPrior(scale=lam, shape=nu)
        sample = GeneSample("g", np.zeros((n, d)), n, np.zeros(d), a)
        post = posterior_cov(prior, sample)
        lhs = (wishart_logpdf(a, n - 1, sigma)
               + inv_wishart_logpdf(sigma, prior.shape, prior.scale))
        rhs = (inv_wishart_logpdf(sigma, post.shape, post.scale)
               + crossprod_marginal_logpdf(a, prior, n))
        worst = max(worst, abs(lhs - rhs))
    _report(3, "prior x likelihood = posterior x marginal", worst < 1e-8,
            f"max abs gap={worst:.2e}")


def test_criterion_4_prior_recovery():
    start = time.perf_counter()
    prior = sim.surrogate_prior()
    shape_errs, scale_errs = [], []
    for seed in range(5):
        config = sim.default_model_config(true_positives=0, effect=0.0,
                                          seed=seed)
        samples, _ = sim.gen_model_dataset(config, RngStream(seed, 0))
        fit = fit_wishart_prior(samples)
        shape_errs.append(abs(fit.prior.shape - prior.shape) / prior.shape)
        scale_errs.append(np.abs((fit.prior.scale - prior.scale)
                                 / prior.scale))
    elapsed = time.perf_counter() - start
    shape_err = float(np.mean(shape_errs))
    scale_err = np.mean(scale_errs, axis=0)
    ok = shape_err < 0.05 and np.all(scale_err < 0.05) and elapsed < 120
    _report(4, "hyperparameter recovery at full scale", ok,
            f"shape err={shape_err:.3f}, max scale err="
            f"{scale_err.max():.3f}, {elapsed:.0f}s")


def test_criterion_5_theta_solve_as_stated():
    # As stated this cannot pass: the reference value 7.5 is reproduced at
    # a per-test type I error of 0.26 (theta = 7.47), while the stated
    # 0.0026 yields theta = 120.1 under the standard noncentrality
    # convention.  The 0.0026 is a misprinted 0.26; the criterion is kept
    # verbatim and left failing.  See notes/decisions for the analysis.
    theta = sim.solve_theta(0.90, 0.0026, 6, 4, 3)
    _report(5, "noncentrality solve at stated arguments",
            abs(theta - 7.5) <= 0.2,
            f"got {theta:.2f}; 7.5 corresponds to alpha=0.26 "
            f"(solve_theta(0.90, 0.26, 6, 4, 3)="
            f"{sim.solve_theta(0.90, 0.26, 6, 4, 3):.2f})")


def test_criterion_6_model_table(model_summary):
    summary, elapsed = model_summary
    grid = np.array(summary.fdr_grid)
    sh_etpr = summary.etpr[Method.SH_HT2]
    sh_efpr = summary.efpr[Method.SH_HT2]
    checks = {
        "ShHT2@0.05": (abs(sh_etpr[0] - 0.929) <= 0.03
                       and abs(sh_efpr[0] - 0.045) <= 0.02),
        "efpr tracks": bool(np.all(np.abs(sh_efpr - grid) <= 0.02)),
        "HT2 efpr": summary.efpr[Method.HT2][0] >= 0.80,
        "ShUT2 etpr": bool(np.all(summary.etpr[Method.SH_UT2] <= 0.55)),
        # "zero within simulation error": indistinguishable from zero at
        # two standard errors of the replicate mean
        "ShUT2 efpr": bool(np.all(
            summary.efpr[Method.SH_UT2]
            <= 2 * summary.efpr_se[Method.SH_UT2] + 1e-9
        )),
        "runtime": elapsed < 600,
    }
    detail = (f"ShHT2@.05=({sh_etpr[0]:.3f},{sh_efpr[0]:.3f}), "
              f"max|efpr-fdr|={np.abs(sh_efpr - grid).max():.3f}, "
              f"HT2 efpr={summary.efpr[Method.HT2][0]:.3f}, "
              f"ShUT2 max etpr={summary.etpr[Method.SH_UT2].max():.3f}, "
              f"{elapsed:.0f}s; " +
              ", ".join(k for k, v in checks.items() if not v))
    _report(6, "in-model operating characteristics", all(checks.values()),
            detail)


def test_criterion_7_mixture_table():
    config = sim.default_mixture_config(sim_replicates=10)
    summary = sim.run_benchmark(config)
    grid = np.array(summary.fdr_grid)
    efpr = summary.efpr[Method.SH_HT2]
    etpr = summary.etpr[Method.SH_HT2]
    ok = bool(np.all(efpr > grid)) and etpr[0] >= 0.90
    _report(7, "misspecified-model control loss", ok,
            f"etpr@.05={etpr[0]:.3f}, efpr={np.round(efpr, 3).tolist()}")


def test_criterion_8_ordering_dominance(model_summary):
    summary, _ = model_summary
    grid = np.arange(0.01, 0.2001, 0.01)
    sh = [sim.curve_power_at(summary.curves[Method.SH_HT2], x) for x in grid]
    su = [sim.curve_power_at(summary.curves[Method.SH_UT2], x) for x in grid]
    ok = all(a >= b for a, b in zip(sh, su))
    _report(8, "ordering-curve dominance", ok,
            f"min gap={min(a - b for a, b in zip(sh, su)):.3f}")


def test_criterion_9_bh_brute_force():
    from test_multiplicity import as_results, brute_force_select

    rng = np.random.default_rng(11)
    ok = True
    for _ in range(1000):
        g = int(rng.integers(1, 51))
        p = rng.uniform(size=g)
        if rng.random() < 0.25:
            p = np.round(p, 1)
        fdr = float(rng.uniform(0.01, 0.5))
        table = bh_select(as_results(list(p)), fdr)
        ok = ok and table.significant_ids == brute_force_select(list(p), fdr)
    _report(9, "step-up selection matches brute force", ok)


def test_criterion_10_distribution_oracles():
    from shrinkt2.distfn import FParams, f_cdf

    rng = np.random.default_rng(13)
    draws = 10**7
    worst_z = 0.0
    for _ in range(10):
        d1 = float(rng.integers(2, 9))
        d2 = float(rng.integers(3, 16))
        lam = float(rng.uniform(2, 40))
        num = rng.noncentral_chisquare(d1, lam, draws) / d1
        den = rng.chisquare(d2, draws) / d2
        ratio = num / den
        x = float(np.quantile(ratio, rng.uniform(0.2, 0.8)))
        est = float(np.mean(ratio <= x))
        se = np.sqrt(est * (1 - est) / draws)
        z = abs(f_cdf(x, FParams(d1, d2, lam)) - est) / se
        worst_z = max(worst_z, z)
    ncf_ok = worst_z < 3.0

    nu, lam = 12.0, np.array([[2.0, 0.5], [0.5, 1.0]])
    stream = RngStream(99, 0)
    mean = np.mean([sample_inv_wishart(stream, nu, lam)
                    for _ in range(10**5)], axis=0)
    expected = lam / (nu - 2 * 2 - 2)
    iw_err = float(np.max(np.abs(mean / expected - 1)))
    _report(10, "distribution oracles", ncf_ok and iw_err < 0.03,
            f"worst ncF z={worst_z:.2f}, inv-Wishart mean err={iw_err:.3f}")
