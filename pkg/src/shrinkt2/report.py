"""Static HTML reports and figure rendering.

Figures are drawn with matplotlib and written as SVG files next to the
delimited outputs; the HTML report inlines the same SVG markup so the page
is self-contained (no external assets beyond outbound gene-database
links).  Rendering is deterministic: a fixed hash salt and no embedded
timestamps, so regenerating from the same inputs is byte-identical.
"""

from __future__ import annotations

import html
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

DEFAULT_GENECARDS_URL = (
    "https://www.genecards.org/cgi-bin/carddisp.pl?gene={gene}"
)

_SVG_META = {"Date": None, "Creator": None}


def _new_figure(width=6.0, height=4.0):
    plt.rcParams["svg.hashsalt"] = "shrinkt2"
    return plt.figure(figsize=(width, height))


def _fig_to_svg(fig, path=None) -> str:
    """Render a figure to SVG text, optionally also writing it to a file."""
    import io

    buf = io.StringIO()
    fig.savefig(buf, format="svg", metadata=_SVG_META, bbox_inches="tight")
    plt.close(fig)
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    # strip the XML prolog for inlining
    start = text.find("<svg")
    return text[start:]


def ordering_curve_figure(curves, path=None, max_points=400) -> str:
    """Per-method (efpr, etpr) sweep, thinned to at most max_points."""
    fig = _new_figure()
    ax = fig.add_subplot(111)
    for method, (efpr, etpr) in curves.items():
        step = max(1, len(efpr) // max_points)
        label = method.value if hasattr(method, "value") else str(method)
        ax.plot(efpr[::step], etpr[::step], label=label, linewidth=1.2)
    ax.set_xlabel("empirical false-discovery proportion")
    ax.set_ylabel("empirical true-positive rate")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.02)
    ax.legend(loc="lower right", fontsize=8)
    ax.grid(True, alpha=0.3)
    return _fig_to_svg(fig, path)


def pvalue_histogram_figure(pvalues, path=None, bins=40) -> str:
    fig = _new_figure()
    ax = fig.add_subplot(111)
    ax.hist([p for p in pvalues if p == p], bins=bins, range=(0, 1),
            color="#4878a8", edgecolor="white")
    ax.set_xlabel("p-value")
    ax.set_ylabel("genes")
    ax.grid(True, alpha=0.3)
    return _fig_to_svg(fig, path)


def rate_table_html(fdr_grid, methods, etpr, efpr) -> str:
    head = "".join(
        f"<th colspan='2'>{html.escape(m.value if hasattr(m, 'value') else str(m))}</th>"
        for m in methods if m in etpr
    )
    sub = "".join("<th>eTPR</th><th>eFPR</th>" for m in methods if m in etpr)
    rows = []
    for i, q in enumerate(fdr_grid):
        cells = "".join(
            f"<td>{etpr[m][i]:.3f}</td><td>{efpr[m][i]:.3f}</td>"
            for m in methods if m in etpr
        )
        rows.append(f"<tr><td>{q:g}</td>{cells}</tr>")
    return (
        "<table class='rates'>"
        f"<tr><th rowspan='2'>FDR</th>{head}</tr><tr>{sub}</tr>"
        + "".join(rows)
        + "</table>"
    )


def _gene_cell(gene_id: str, url_template: str | None) -> str:
    text = html.escape(gene_id)
    if not url_template:
        return text
    url = html.escape(url_template.format(gene=gene_id), quote=True)
    return f"<a href='{url}'>{text}</a>"


def results_table_html(rows, fdr: float, url_template: str | None,
                       max_rows: int | None = None) -> str:
    """Ranked gene table.

    Columns: gene (linked when a URL template is given), per-condition
    effect estimates, statistic, p-value, the step-up threshold
    rank*fdr/G, and the significance flag.
    """
    g = len(rows)
    n_effects = len(rows[0]["effects"]) if rows else 0
    header = ["#", "gene"]
    header += [f"effect {k + 1}" for k in range(n_effects)]
    header += ["stat", "p-value", f"FDR={fdr:g} threshold", "significant"]
    parts = ["<table class='genes'><tr>"]
    parts += [f"<th>{html.escape(h)}</th>" for h in header]
    parts.append("</tr>")
    shown = rows if max_rows is None else rows[:max_rows]
    for row in shown:
        cells = [str(row["rank"]), _gene_cell(row["gene"], url_template)]
        cells += [f"{v:.3g}" for v in row["effects"]]
        threshold = row["rank"] * fdr / max(1, g)
        cells += [
            f"{row['statistic']:.4g}" if row["statistic"] == row["statistic"] else "-",
            f"{row['pvalue']:.3e}" if row["pvalue"] == row["pvalue"] else "-",
            f"{threshold:.3e}",
            "yes" if row["significant"] else "",
        ]
        parts.append(
            "<tr>" + "".join(f"<td>{c}</td>" for c in cells) + "</tr>"
        )
    parts.append("</table>")
    if max_rows is not None and g > max_rows:
        parts.append(f"<p>... {g - max_rows} further genes omitted.</p>")
    return "".join(parts)


_PAGE = """<!DOCTYPE html>
<html>
<head>
<meta charset="utf-8">
<title>{title}</title>
<style>
body {{ font-family: sans-serif; margin: 2em; color: #222; }}
h1 {{ font-size: 1.4em; }} h2 {{ font-size: 1.1em; margin-top: 1.6em; }}
table {{ border-collapse: collapse; margin: 0.8em 0; }}
th, td {{ border: 1px solid #bbb; padding: 0.25em 0.6em; font-size: 0.85em; }}
th {{ background: #eef2f6; }}
.banner {{ padding: 0.5em 0.8em; background: #eef6ee; border: 1px solid #9c9;
          display: inline-block; }}
.banner.empty {{ background: #f6eeee; border-color: #c99; }}
pre {{ background: #f4f4f4; padding: 0.6em; }}
</style>
</head>
<body>
<h1>{title}</h1>
{body}
</body>
</html>
"""


def render_page(title: str, sections) -> str:
    """Assemble (heading, html fragment) sections into one page."""
    parts = []
    for heading, fragment in sections:
        if heading:
            parts.append(f"<h2>{html.escape(heading)}</h2>")
        parts.append(fragment)
    return _PAGE.format(title=html.escape(title), body="\n".join(parts))


def significant_banner(n_significant: int, n_total: int, fdr: float) -> str:
    cls = "banner empty" if n_significant == 0 else "banner"
    return (
        f"<p class='{cls}'>{n_significant} significant of {n_total} genes "
        f"at FDR {fdr:g}</p>"
    )
