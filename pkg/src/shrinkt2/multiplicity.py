"""Benjamini-Hochberg step-up selection over a ranked gene list."""

from __future__ import annotations

from dataclasses import dataclass

from .errors import DomainError
from .stats import TestResult


@dataclass
class GeneRow:
    gene_id: str
    statistic: float
    pvalue: float
    rank: int
    significant: bool


@dataclass
class GeneTable:
    """P-value-ranked rows with a step-up significance prefix."""

    rows: list[GeneRow]
    nominal_fdr: float
    n_dropped: int = 0

    @property
    def significant_ids(self) -> set[str]:
        return {r.gene_id for r in self.rows if r.significant}

    @property
    def n_significant(self) -> int:
        return sum(1 for r in self.rows if r.significant)


def bh_select(results, fdr: float, na_policy: str = "drop") -> GeneTable:
    """Step-up selection: the largest k with p_(k) <= k * fdr / G wins,
    and rows 1..k are significant.

    Ties in p-value break by gene id, so the ranking is deterministic.
    Genes without a usable p-value are dropped and G reduced
    (na_policy="drop"), or kept with p = 1 (na_policy="worst") for
    sensitivity analysis.
    """
    if not 0.0 < fdr < 1.0:
        raise DomainError("fdr must lie strictly between 0 and 1")
    if na_policy not in ("drop", "worst"):
        raise DomainError(f"unknown na_policy {na_policy!r}")

    items = []
    n_dropped = 0
    for res in results:
        if isinstance(res, TestResult):
            gene_id, stat, p, usable = res.gene_id, res.statistic, res.pvalue, res.ok
        else:
            gene_id, stat, p = res
            usable = p == p  # NaN check
        if not usable or p != p:
            if na_policy == "drop":
                n_dropped += 1
                continue
            stat, p = float("nan"), 1.0
        if not 0.0 <= p <= 1.0:
            raise DomainError(f"p-value {p} out of [0, 1] for gene {gene_id}")
        items.append((p, gene_id, stat))

    items.sort(key=lambda t: (t[0], t[1]))
    g = len(items)
    k = 0
    for i, (p, _, _) in enumerate(items, start=1):
        if p <= i * fdr / g:
            k = i
    rows = [
        GeneRow(gene_id, stat, p, rank, rank <= k)
        for rank, (p, gene_id, stat) in enumerate(items, start=1)
    ]
    return GeneTable(rows=rows, nominal_fdr=fdr, n_dropped=n_dropped)


def confusion(table: GeneTable, truth: set) -> tuple[float, float]:
    """(empirical true-positive rate, empirical false-discovery proportion).

    etpr = called truths / |truth|; efpr = false calls / total calls,
    zero when nothing is called.
    """
    called = table.significant_ids
    n_called = len(called)
    etpr = len(called & set(truth)) / len(truth) if truth else 0.0
    efpr = len(called - set(truth)) / max(1, n_called)
    return etpr, efpr
