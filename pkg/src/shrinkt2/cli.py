"""Command-line interface: fit, test, simulate, report.

Exit codes: 0 success, 1 I/O problem, 2 inadmissible design/hypothesis
combination, 3 non-convergent fit, 4 internal invariant failure.  All
commands are deterministic functions of their inputs and the seed.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import dataio, report, sim
from .errors import (
    AdmissibilityError,
    DimensionMismatch,
    DomainError,
    DuplicateGene,
    LayoutError,
    NonConvergence,
    ParseError,
    RankDeficiency,
    ShrinkT2Error,
    TooFewGenes,
    VersionMismatch,
)
from .model import FitConfig, SimplePrior, WishartPrior
from .multiplicity import bh_select
from .stats import Contrast, Method, apply_contrast, make_contrast, run_tests

EXIT_OK = 0
EXIT_IO = 1
EXIT_ADMISSIBILITY = 2
EXIT_NONCONVERGENCE = 3
EXIT_INTERNAL = 4

NAMED_H0 = ("zero.means", "equal.means", "no.trend")


def _load_contrast(h0: str, d: int) -> Contrast:
    if h0 in NAMED_H0:
        try:
            return make_contrast(h0, d)
        except DomainError as exc:
            raise AdmissibilityError(str(exc)) from exc
    path = Path(h0)
    if not path.exists():
        raise ParseError("contrast file not found", path=str(path))
    rows = []
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        rows.append([float(x) for x in line.split()])
    matrix = np.array(rows)
    if matrix.ndim != 2 or matrix.shape[1] != d:
        raise AdmissibilityError(
            f"custom contrast must have {d} columns, got shape {matrix.shape}"
        )
    return Contrast(matrix, rank=matrix.shape[0], name="custom")


def _check_admissibility(var_struct: str, contrast: Contrast, n: int, d: int):
    """The design rules gating each hypothesis, checked before any work."""
    if var_struct == "simple":
        if n <= 1:
            raise AdmissibilityError("simple structure needs n > 1")
        return
    name = contrast.name
    if name == "zero.means" and not n > d:
        raise AdmissibilityError(
            f"zero.means under the general structure needs n > d "
            f"(n={n}, d={d})"
        )
    if name == "equal.means" and not n > d - 1:
        raise AdmissibilityError(
            f"equal.means under the general structure needs n > d-1 "
            f"(n={n}, d={d})"
        )
    if name == "no.trend":
        if d <= 2:
            raise AdmissibilityError("no.trend only makes sense for d > 2")
        if n <= 1:
            raise AdmissibilityError("no.trend needs n > 1")
    if name == "custom" and not contrast.rank < n:
        raise AdmissibilityError(
            f"custom contrast rank {contrast.rank} must be < n = {n}"
        )


def _apply_config_file(args):
    """Flat key=value file whose entries override the parsed flags."""
    if not getattr(args, "config", None):
        return args
    path = Path(args.config)
    if not path.exists():
        raise ParseError("config file not found", path=str(path))
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ParseError("expected key=value", path=str(path), line=lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        attr = key.replace("-", "_")
        if not hasattr(args, attr):
            raise ParseError(f"unknown config key {key!r}", path=str(path),
                             line=lineno)
        current = getattr(args, attr)
        if isinstance(current, bool):
            value = value.lower() in ("1", "true", "yes")
        elif isinstance(current, int):
            value = int(value)
        elif isinstance(current, float):
            value = float(value)
        elif current is None:
            # unset numeric flags: best-effort numeric conversion
            for cast in (int, float):
                try:
                    value = cast(value)
                    break
                except ValueError:
                    continue
        setattr(args, attr, value)
    return args


def _prepare(args):
    dataset = dataio.parse_dataset(args.input, args.layout)
    n, d = dataset.layout.n_replicates, dataset.layout.n_conditions
    contrast = _load_contrast(args.h0, d)
    _check_admissibility(args.var_struct, contrast, n, d)
    samples = dataio.to_gene_samples(dataset)
    transformed = [apply_contrast(s, None, contrast)[0] for s in samples]
    return dataset, samples, transformed, contrast


def cmd_fit(args) -> int:
    dataset, samples, transformed, contrast = _prepare(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    fit_config = FitConfig(max_iter=args.max_iter, gene_floor=args.gene_floor,
                           rel_tol=args.rel_tol, step_tol=args.step_tol)
    if args.var_struct == "general":
        from .model import fit_wishart_prior

        fit = fit_wishart_prior(transformed, fit_config)
    else:
        from .model import fit_simple_prior

        fit = fit_simple_prior(transformed, fit_config)
    prior_path = out_dir / "prior.txt"
    dataio.save_prior(fit.prior, prior_path, extra={
        "var_struct": args.var_struct,
        "h0": contrast.name if contrast.name != "custom" else args.h0,
        "contrast_rank": contrast.rank,
    })
    diag_path = out_dir / "fit_diagnostics.txt"
    diag_lines = [
        f"log_likelihood={fit.loglik:.17g}",
        f"iterations={fit.iterations}",
        f"converged={fit.converged}",
        f"gradient_norm={fit.grad_norm:.6g}",
        f"genes_used={fit.n_used}",
        f"genes_excluded={len(fit.excluded)}",
    ]
    if fit.excluded:
        diag_lines.append("excluded_ids=" + ",".join(fit.excluded[:50]))
    diag_path.write_text("\n".join(diag_lines) + "\n")
    print(f"wrote {prior_path} and {diag_path}")
    if not fit.converged:
        print("fit did not converge", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    return EXIT_OK


def cmd_test(args) -> int:
    dataset, samples, transformed, contrast = _prepare(args)
    prior, extra = dataio.load_prior(args.prior)
    r = transformed[0].dim if transformed else contrast.rank
    if args.var_struct == "general":
        if not isinstance(prior, WishartPrior):
            raise AdmissibilityError("general structure needs a covariance prior")
        dataio.check_prior_dim(prior, r)
        method = Method.SH_HT2
    else:
        if not isinstance(prior, SimplePrior):
            raise AdmissibilityError("simple structure needs a simple prior")
        method = Method.SH_UT2
    results = run_tests(transformed, method, prior=prior)
    table = bh_select(results, args.fdr, na_policy="worst")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    results_by_id = {res.gene_id: res for res in results}
    effects = {s.gene_id: s.mean for s in samples}
    csv_path = out_dir / "results.csv"
    dataio.save_results(table, results_by_id, csv_path, effects=effects)
    print(f"wrote {csv_path} ({table.n_significant} significant at "
          f"FDR {args.fdr:g})")
    if args.html:
        rows = dataio.load_results(csv_path)
        url = None if args.no_gene_links else args.gene_url
        page = report.render_page(
            f"{method.value} gene ranking",
            [
                ("", report.significant_banner(table.n_significant,
                                               len(table.rows), args.fdr)),
                ("Ranked genes",
                 report.results_table_html(rows, args.fdr, url)),
            ],
        )
        html_path = out_dir / "results.html"
        html_path.write_text(page)
        print(f"wrote {html_path}")
    return EXIT_OK


def _sim_config(args) -> sim.SimConfig:
    overrides = dict(
        genes=args.genes,
        conditions=args.conditions,
        replicates=args.replicates,
        true_positives=args.true_positives,
        sim_replicates=args.reps,
        seed=args.seed,
        fdr_grid=tuple(float(x) for x in args.fdr_grid.split(",")),
    )
    if args.effect is not None:
        overrides["effect"] = args.effect
    if args.generator == "model":
        return sim.default_model_config(**overrides)
    return sim.default_mixture_config(**overrides)


def cmd_simulate(args) -> int:
    config = _sim_config(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = sim.run_benchmark(config)
    rates_path = out_dir / "rates.csv"
    curves_path = out_dir / "curves.csv"
    sim.write_rate_table(summary, rates_path)
    sim.write_ordering_curves(summary, curves_path)
    svg_path = out_dir / "curves.svg"
    report.ordering_curve_figure(summary.curves, path=svg_path)
    print(f"wrote {rates_path}, {curves_path}, {svg_path} "
          f"({summary.replicates_used} replicates)")
    if summary.failures:
        manifest = out_dir / "failures.txt"
        manifest.write_text(
            "\n".join(f"replicate {r}: {msg}" for r, msg in summary.failures)
            + "\n"
        )
        print(f"{len(summary.failures)} replicate(s) failed; "
              f"see {manifest}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    return EXIT_OK


def cmd_report(args) -> int:
    rows = dataio.load_results(args.results)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    n_sig = sum(1 for r in rows if r["significant"])
    url = None if args.no_gene_links else args.gene_url
    sections = [
        ("", report.significant_banner(n_sig, len(rows), args.fdr)),
    ]
    if args.diagnostics:
        diag = Path(args.diagnostics)
        if not diag.exists():
            raise ParseError("diagnostics file not found", path=str(diag))
        sections.append(
            ("Fit diagnostics", "<pre>" + diag.read_text() + "</pre>")
        )
    pvals = [r["pvalue"] for r in rows]
    svg_hist = report.pvalue_histogram_figure(
        pvals, path=out_dir / "pvalues.svg"
    )
    sections.append(("P-value distribution", svg_hist))
    if args.curves:
        curves = _load_curves(args.curves)
        svg_curves = report.ordering_curve_figure(
            curves, path=out_dir / "curves.svg"
        )
        sections.append(("Ordering curves", svg_curves))
    sections.append(
        ("Ranked genes",
         report.results_table_html(rows, args.fdr, url,
                                   max_rows=args.max_rows))
    )
    page = report.render_page("Gene-level test report", sections)
    html_path = out_dir / "report.html"
    html_path.write_text(page)
    print(f"wrote {html_path}")
    return EXIT_OK


def _load_curves(path):
    import csv as _csv

    curves = {}
    try:
        with open(path, newline="") as fh:
            for rec in _csv.DictReader(fh):
                curves.setdefault(rec["method"], ([], []))
                curves[rec["method"]][0].append(float(rec["efpr"]))
                curves[rec["method"]][1].append(float(rec["etpr"]))
    except OSError as exc:
        raise ParseError(str(exc), path=str(path)) from exc
    return {k: (np.array(x), np.array(y)) for k, (x, y) in curves.items()}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shrinkt2",
        description="Shrinkage-covariance gene-level tests and benchmarks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common_data(p):
        p.add_argument("--input", required=True, help="delimited matrix file")
        p.add_argument("--layout", required=True,
                       help="comma list mapping data columns, e.g. r1c1,r1c2,...")
        p.add_argument("--var-struct", choices=("general", "simple"),
                       default="general", dest="var_struct")
        p.add_argument("--h0", default="equal.means",
                       help="zero.means | equal.means | no.trend | contrast file")
        p.add_argument("--out-dir", default=".", dest="out_dir")
        p.add_argument("--config", help="flat key=value file overriding flags")

    p_fit = sub.add_parser("fit", help="fit prior hyperparameters")
    add_common_data(p_fit)
    p_fit.add_argument("--max-iter", type=int, default=500, dest="max_iter")
    p_fit.add_argument("--gene-floor", type=int, default=50, dest="gene_floor")
    p_fit.add_argument("--rel-tol", type=float, default=1e-9, dest="rel_tol",
                       help="relative log-likelihood change at convergence")
    p_fit.add_argument("--step-tol", type=float, default=1e-7, dest="step_tol",
                       help="parameter-step infinity norm at convergence")
    p_fit.set_defaults(func=cmd_fit)

    p_test = sub.add_parser("test", help="score genes against a fitted prior")
    add_common_data(p_test)
    p_test.add_argument("--prior", required=True, help="prior file from fit")
    p_test.add_argument("--fdr", type=float, default=0.10)
    p_test.add_argument("--html", action="store_true",
                        help="also write a browsable gene list")
    p_test.add_argument("--gene-url", default=report.DEFAULT_GENECARDS_URL,
                        dest="gene_url",
                        help="URL template with {gene} placeholder")
    p_test.add_argument("--no-gene-links", action="store_true",
                        dest="no_gene_links")
    p_test.set_defaults(func=cmd_test)

    p_sim = sub.add_parser("simulate", help="operating-characteristic study")
    p_sim.add_argument("--generator", choices=("model", "mixture"),
                       default="model")
    p_sim.add_argument("--reps", type=int, default=100)
    p_sim.add_argument("--seed", type=int, default=4)
    p_sim.add_argument("--genes", type=int, default=12625)
    p_sim.add_argument("--conditions", type=int, default=2)
    p_sim.add_argument("--replicates", type=int, default=3)
    p_sim.add_argument("--true-positives", type=int, default=100,
                       dest="true_positives")
    p_sim.add_argument("--effect", type=float, default=None,
                       help="standardized per-group effect for designated genes")
    p_sim.add_argument("--fdr-grid", default="0.05,0.10,0.15,0.20,0.25",
                       dest="fdr_grid")
    p_sim.add_argument("--out-dir", default=".", dest="out_dir")
    p_sim.add_argument("--config", help="flat key=value file overriding flags")
    p_sim.set_defaults(func=cmd_simulate)

    p_rep = sub.add_parser("report", help="bundle results into a static page")
    p_rep.add_argument("--results", required=True, help="results.csv from test")
    p_rep.add_argument("--fdr", type=float, default=0.10)
    p_rep.add_argument("--diagnostics", help="fit diagnostics text file")
    p_rep.add_argument("--curves", help="curves.csv from simulate")
    p_rep.add_argument("--out-dir", default=".", dest="out_dir")
    p_rep.add_argument("--max-rows", type=int, default=500, dest="max_rows")
    p_rep.add_argument("--gene-url", default=report.DEFAULT_GENECARDS_URL,
                       dest="gene_url")
    p_rep.add_argument("--no-gene-links", action="store_true",
                       dest="no_gene_links")
    p_rep.add_argument("--config", help="flat key=value file overriding flags")
    p_rep.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args = _apply_config_file(args)
        return args.func(args)
    except (ParseError, LayoutError, DuplicateGene, VersionMismatch,
            OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (AdmissibilityError, RankDeficiency, TooFewGenes,
            DimensionMismatch) as exc:
        print(f"inadmissible: {exc}", file=sys.stderr)
        return EXIT_ADMISSIBILITY
    except NonConvergence as exc:
        print(f"non-convergence: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except ShrinkT2Error as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
