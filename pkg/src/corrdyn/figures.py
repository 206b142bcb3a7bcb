"""Render verification reports to summary figures.

One horizontal bar per report, showing how far the observed value sits from
its target (log scale): bars to the left of the target line pass, bars to
the right fail.  Written alongside the machine-readable report so a run
leaves a human-scannable artifact too.
"""

from __future__ import annotations

from typing import Sequence


def render_report_figure(reports: Sequence, path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    import numpy as np

    if not reports:
        return

    labels = []
    margins = []
    colors = []
    for rep in reports:
        tag = ", ".join(f"{k}={v}" for k, v in rep.params.items() if k in ("n", "t", "t1", "t2"))
        labels.append(f"{rep.name} [{tag}]" if tag else rep.name)
        if rep.target is not None and rep.target > 0 and rep.observed == rep.observed:
            ratio = max(rep.observed, 1e-300) / rep.target
            margins.append(np.log10(ratio))
        else:
            margins.append(0.5 if not rep.passed else -0.5)
        colors.append("#2a9d3a" if rep.passed else "#c43c3c")

    height = max(2.5, 0.28 * len(reports) + 1.2)
    fig, ax = plt.subplots(figsize=(9, height))
    y = np.arange(len(reports))
    ax.barh(y, margins, color=colors, height=0.6)
    ax.axvline(0.0, color="black", lw=1.0)
    ax.set_yticks(y)
    ax.set_yticklabels(labels, fontsize=7)
    ax.invert_yaxis()
    ax.set_xlabel("log10(observed / target)   (left of 0 passes)")
    n_fail = sum(1 for r in reports if not r.passed)
    ax.set_title(f"property reports: {len(reports) - n_fail}/{len(reports)} passed")
    ax.grid(axis="x", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
