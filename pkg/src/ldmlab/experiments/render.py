"""Markdown tables and line plots from a directory of EvalReports."""
from __future__ import annotations

import csv
import math
from pathlib import Path

from ..metrics.report import EvalReport

PLOT_TABLES = {
    "diversity_bins": ("bin_lo", "mean", "token count (bin start)", "mean pairwise MS-SSIM"),
    "forgetting": ("step", ("in_domain_macro", "general_macro"), "training step", "CheXpert@10 macro"),
}


def fmt(v) -> str:
    if isinstance(v, bool):
        return str(v)
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        if math.isnan(v):
            return "n/a"
        return f"{v:.6g}"
    return str(v)


def markdown_table(rows, columns=None) -> str:
    rows = list(rows)
    if not rows:
        return "_(empty)_\n"
    columns = columns or list(rows[0].keys())
    lines = ["| " + " | ".join(columns) + " |", "|" + "|".join("---" for _ in columns) + "|"]
    for r in rows:
        lines.append("| " + " | ".join(fmt(r.get(c, "")) for c in columns) + " |")
    return "\n".join(lines) + "\n"


def _visible_columns(report, rows):
    """Table columns, minus fingerprint columns that repeat the report header."""
    columns = list(rows[0].keys()) if rows else []
    header = {"config_fingerprint": report.config_fingerprint, "corpus_fingerprint": report.corpus_fingerprint}
    return [c for c in columns if not (c in header and all(str(r.get(c)) == header[c] for r in rows))]


def render_report(report: EvalReport, plots=()) -> str:
    out = [f"## {report.task}", "",
           f"config `{report.config_fingerprint}` · corpus `{report.corpus_fingerprint}`", ""]
    if report.values:
        out.append(markdown_table([{"metric": k, "value": v} for k, v in sorted(report.values.items())]))
    for name in sorted(report.tables):
        rows = report.tables[name]
        out += [f"### {name}", "", markdown_table(rows, _visible_columns(report, rows))]
    if report.flags:
        out += ["flags: " + ", ".join(report.flags), ""]
    for key, value in sorted(report.metadata.items()):
        out.append(f"- {key}: {value}")
    if report.metadata:
        out.append("")
    for p in plots:
        out += [f"![{Path(p).stem}]({Path(p).name})", ""]
    return "\n".join(out)


def _plot_table(rows, spec, path, title):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    x_key, y_keys, x_label, y_label = spec
    y_keys = (y_keys,) if isinstance(y_keys, str) else y_keys
    fig, ax = plt.subplots(figsize=(5, 3.2))
    xs = [r[x_key] for r in rows]
    for key in y_keys:
        ax.plot(xs, [r[key] for r in rows], marker="o", label=key)
    if "ci_lo" in rows[0]:
        ax.fill_between(xs, [r["ci_lo"] for r in rows], [r["ci_hi"] for r in rows], alpha=0.2)
    ax.set_xlabel(x_label)
    ax.set_ylabel(y_label)
    ax.set_title(title)
    if len(y_keys) > 1:
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def plot_loss_curve(csv_path, out_path, window=50):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    import numpy as np

    with open(csv_path, newline="") as fh:
        losses = np.array([float(r["loss"]) for r in csv.DictReader(fh)])
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(losses, alpha=0.3, lw=0.8)
    if len(losses) >= window:
        ax.plot(np.arange(window - 1, len(losses)), np.convolve(losses, np.ones(window) / window, "valid"))
    ax.set_xlabel("step")
    ax.set_ylabel("noise MSE")
    ax.set_title(Path(csv_path).stem)
    fig.tight_layout()
    fig.savefig(out_path, dpi=100)
    plt.close(fig)
    return out_path


def render_directory(input_dir, output_dir=None, plots=True, title="Results") -> Path:
    """Render every ``*.txt`` EvalReport in ``input_dir`` (with its CSV
    tables) into ``report.md``; loss CSVs and plottable tables become PNGs."""
    input_dir = Path(input_dir)
    output_dir = Path(output_dir or input_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    sections = [f"# {title}", ""]
    for path in sorted(input_dir.glob("*.txt")):
        report = EvalReport.read(path)
        made = []
        if plots:
            for name, spec in PLOT_TABLES.items():
                rows = report.tables.get(name)
                if rows:
                    made.append(_plot_table(rows, spec, output_dir / f"{path.stem}.{name}.png", name))
        sections.append(render_report(report, made))
    if plots:
        curves = [plot_loss_curve(p, output_dir / f"{p.stem}.png") for p in sorted(input_dir.glob("*loss.csv"))]
        if curves:
            sections += ["## loss curves", ""] + [f"![{c.stem}]({c.name})\n" for c in curves]
    out = output_dir / "report.md"
    out.write_text("\n".join(sections).rstrip() + "\n")
    return out
