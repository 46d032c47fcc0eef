"""Parsing of delimited expression matrices and flat-file persistence.

Input files are tab- or comma-delimited text with a header row: the first
column holds unique gene identifiers and every remaining column is mapped
by the layout onto one (replicate, condition) cell.  Values are assumed
already log-transformed; nothing here rescales them.  Empty fields, "NA",
and "NaN" (case-insensitive) mark missing values, and a replicate row is
dropped for a gene whenever any of its condition measurements is missing.

Numbers round-trip through text at 17 significant digits, which is exact
for IEEE doubles.
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionMismatch,
    DuplicateGene,
    LayoutError,
    ParseError,
    VersionMismatch,
)
from .model import GeneSample, SimplePrior, WishartPrior

_MISSING = {"", "na", "nan"}
_TOKEN = re.compile(r"^r(\d+)c(\d+)$")
_FORMAT_VERSION = "1"


@dataclass
class Layout:
    """Ordered assignment of data columns to (replicate, condition) cells."""

    cells: list  # [(replicate, condition)] 1-based, in column order

    @classmethod
    def parse(cls, spec: str) -> "Layout":
        cells = []
        for token in spec.split(","):
            token = token.strip()
            m = _TOKEN.match(token)
            if not m:
                raise LayoutError(f"bad layout token {token!r} (expected rNcM)")
            cells.append((int(m.group(1)), int(m.group(2))))
        if len(set(cells)) != len(cells):
            raise LayoutError("layout assigns some (replicate, condition) twice")
        reps = {r for r, _ in cells}
        conds = {c for _, c in cells}
        if reps != set(range(1, len(reps) + 1)) or conds != set(range(1, len(conds) + 1)):
            raise LayoutError("replicate/condition indices must be 1..n and 1..d")
        if len(cells) != len(reps) * len(conds):
            raise LayoutError("layout must cover every (replicate, condition) cell")
        return cls(cells)

    @property
    def n_replicates(self) -> int:
        return max(r for r, _ in self.cells)

    @property
    def n_conditions(self) -> int:
        return max(c for _, c in self.cells)

    def spec_string(self) -> str:
        return ",".join(f"r{r}c{c}" for r, c in self.cells)


@dataclass
class ExpressionDataset:
    gene_ids: list
    values: np.ndarray  # (genes, n*d) in file column order, NaN = missing
    layout: Layout
    metadata: dict = field(default_factory=dict)
    column_names: list = field(default_factory=list)

    @property
    def n_genes(self) -> int:
        return len(self.gene_ids)

    def complete_counts(self) -> np.ndarray:
        """Per-gene number of replicates with every condition present."""
        n, d = self.layout.n_replicates, self.layout.n_conditions
        counts = np.zeros(self.n_genes, dtype=int)
        for g in range(self.n_genes):
            rows = self._replicate_matrix(g)
            counts[g] = int(np.sum(~np.isnan(rows).any(axis=1)))
        return counts

    def flagged_genes(self) -> list:
        """Genes with fewer than 2 complete replicates."""
        counts = self.complete_counts()
        return [gid for gid, c in zip(self.gene_ids, counts) if c < 2]

    def _replicate_matrix(self, g: int) -> np.ndarray:
        n, d = self.layout.n_replicates, self.layout.n_conditions
        rows = np.full((n, d), np.nan)
        for col, (r, c) in enumerate(self.layout.cells):
            rows[r - 1, c - 1] = self.values[g, col]
        return rows


def _sniff_delimiter(header_line: str) -> str:
    return "\t" if header_line.count("\t") >= header_line.count(",") else ","


def parse_dataset(path, layout) -> ExpressionDataset:
    """Read a delimited expression matrix against a layout.

    The layout may be a Layout or a spec string like
    "r1c1,r1c2,r2c1,r2c2,r3c1,r3c2"; it must name every data column.
    """
    if isinstance(layout, str):
        layout = Layout.parse(layout)
    try:
        with open(path, "r", newline="") as fh:
            first = fh.readline()
            if not first:
                raise ParseError("empty file", path=str(path))
            delim = _sniff_delimiter(first)
            fh.seek(0)
            reader = csv.reader(fh, delimiter=delim)
            header = next(reader)
            columns = [h.strip() for h in header[1:]]
            if len(columns) != len(layout.cells):
                raise LayoutError(
                    f"layout names {len(layout.cells)} columns but the file "
                    f"has {len(columns)}"
                )
            gene_ids, rows = [], []
            seen = set()
            for lineno, rec in enumerate(reader, start=2):
                if not rec or (len(rec) == 1 and not rec[0].strip()):
                    continue
                if len(rec) != len(columns) + 1:
                    raise ParseError(
                        f"expected {len(columns) + 1} fields, got {len(rec)}",
                        path=str(path), line=lineno,
                    )
                gid = rec[0].strip()
                if not gid:
                    raise ParseError("empty gene id", path=str(path), line=lineno)
                if gid in seen:
                    raise DuplicateGene(f"gene id {gid!r} appears twice")
                seen.add(gid)
                vals = []
                for j, fieldval in enumerate(rec[1:], start=2):
                    text = fieldval.strip()
                    if text.lower() in _MISSING:
                        vals.append(math.nan)
                        continue
                    try:
                        v = float(text)
                    except ValueError as exc:
                        raise ParseError(
                            f"bad number {text!r} in column {j}",
                            path=str(path), line=lineno,
                        ) from exc
                    if not math.isfinite(v):
                        raise ParseError(
                            f"non-finite value in column {j}",
                            path=str(path), line=lineno,
                        )
                    vals.append(v)
                gene_ids.append(gid)
                rows.append(vals)
    except OSError as exc:
        raise ParseError(str(exc), path=str(path)) from exc
    values = np.array(rows, dtype=float) if rows else np.zeros((0, len(layout.cells)))
    return ExpressionDataset(gene_ids=gene_ids, values=values, layout=layout,
                             column_names=columns)


def write_dataset(dataset: ExpressionDataset, path, delimiter="\t") -> None:
    """Inverse of parse_dataset, exact at 17 significant digits."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, delimiter=delimiter)
        names = dataset.column_names or [
            f"r{r}c{c}" for r, c in dataset.layout.cells
        ]
        writer.writerow(["gene"] + list(names))
        for gid, row in zip(dataset.gene_ids, dataset.values):
            out = [gid]
            for v in row:
                out.append("NA" if math.isnan(v) else f"{v:.17g}")
            writer.writerow(out)


def to_gene_samples(dataset: ExpressionDataset) -> list:
    """Per-gene complete-case summaries in file order."""
    samples = []
    for g, gid in enumerate(dataset.gene_ids):
        rows = dataset._replicate_matrix(g)
        complete = rows[~np.isnan(rows).any(axis=1)]
        samples.append(GeneSample.from_observations(gid, complete))
    return samples


# ---------------------------------------------------------------------------
# prior files


def save_prior(prior, path, extra: dict | None = None) -> None:
    """Flat key=value serialization; matrices are row-major on one line."""
    lines = [f"format={_FORMAT_VERSION}"]
    if isinstance(prior, WishartPrior):
        lines.append("kind=general")
        lines.append(f"dim={prior.dim}")
        lines.append(f"shape={prior.shape:.17g}")
        flat = " ".join(f"{v:.17g}" for v in prior.scale.ravel())
        lines.append(f"scale={flat}")
    elif isinstance(prior, SimplePrior):
        lines.append("kind=simple")
        lines.append(f"rate={prior.rate:.17g}")
        lines.append(f"shape={prior.shape:.17g}")
    else:
        raise ParseError(f"cannot serialize prior of type {type(prior).__name__}")
    for k, v in (extra or {}).items():
        lines.append(f"{k}={v}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_prior(path):
    """Read a prior file; returns (prior, extra key-values)."""
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ParseError(str(exc), path=str(path)) from exc
    fields = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ParseError("expected key=value", path=str(path), line=lineno)
        k, v = line.split("=", 1)
        fields[k.strip()] = v.strip()
    version = fields.pop("format", None)
    if version != _FORMAT_VERSION:
        raise VersionMismatch(
            f"prior file format {version!r}, expected {_FORMAT_VERSION!r}"
        )
    kind = fields.pop("kind", None)
    try:
        if kind == "general":
            d = int(fields.pop("dim"))
            shape = float(fields.pop("shape"))
            scale = np.array([float(x) for x in fields.pop("scale").split()])
            if scale.size != d * d:
                raise ParseError(f"scale needs {d * d} entries", path=str(path))
            prior = WishartPrior(scale=scale.reshape(d, d), shape=shape)
        elif kind == "simple":
            prior = SimplePrior(rate=float(fields.pop("rate")),
                                shape=float(fields.pop("shape")))
        else:
            raise ParseError(f"unknown prior kind {kind!r}", path=str(path))
    except (KeyError, ValueError) as exc:
        raise ParseError(f"bad prior file: {exc}", path=str(path)) from exc
    return prior, fields


def check_prior_dim(prior, d: int) -> None:
    if isinstance(prior, WishartPrior) and prior.dim != d:
        raise DimensionMismatch(
            f"prior dimension {prior.dim} does not match data dimension {d}"
        )


# ---------------------------------------------------------------------------
# result files


RESULT_FIELDS = ["gene", "statistic", "df1", "df2", "pvalue", "rank",
                 "significant", "flag"]


def save_results(table, results_by_id, path, effects=None) -> None:
    """Ranked result CSV: one row per gene, sorted ascending by p-value.

    `table` is a GeneTable; `results_by_id` maps gene id to its TestResult
    (for degrees of freedom and flags); `effects` optionally maps gene id
    to per-condition effect estimates, emitted as extra columns.
    """
    n_effects = 0
    if effects:
        n_effects = len(next(iter(effects.values())))
    header = ["gene"]
    header += [f"effect{k + 1}" for k in range(n_effects)]
    header += ["statistic", "df1", "df2", "pvalue", "rank", "significant", "flag"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in table.rows:
            res = results_by_id[row.gene_id]
            rec = [row.gene_id]
            if effects:
                rec += [f"{v:.6g}" for v in effects[row.gene_id]]
            rec += [
                f"{row.statistic:.17g}",
                f"{res.df1:.17g}",
                f"{res.df2:.17g}",
                f"{row.pvalue:.17g}",
                row.rank,
                int(row.significant),
                res.note if not res.ok else "",
            ]
            writer.writerow(rec)


def load_results(path) -> list:
    """Rows of a result CSV as dicts with typed fields."""
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            rows = []
            for rec in reader:
                if rec.get("gene") is None:
                    raise ParseError("missing gene column", path=str(path))
                rows.append({
                    "gene": rec["gene"],
                    "statistic": float(rec["statistic"]),
                    "pvalue": float(rec["pvalue"]),
                    "rank": int(rec["rank"]),
                    "significant": rec["significant"] in ("1", "True", "true"),
                    "flag": rec.get("flag", ""),
                    "effects": [
                        float(v) for k, v in rec.items()
                        if k and k.startswith("effect") and v not in (None, "")
                    ],
                })
            return rows
    except OSError as exc:
        raise ParseError(str(exc), path=str(path)) from exc
    except (KeyError, ValueError, TypeError) as exc:
        raise ParseError(f"bad results file: {exc}", path=str(path)) from exc
