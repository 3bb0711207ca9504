"""Deterministic SVG log-log plots of slope fits."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .analysis import SlopeFit  # noqa: E402

RC = {"svg.hashsalt": "hmfstrat", "svg.fonttype": "none", "path.simplify": False}


def plot_slope_fits(fits: dict[str, SlopeFit], path, title: str = "") -> Path:
    """One log-log panel: measured volumes and fitted lines, keyed by label."""
    path = Path(path)
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(5, 4))
        for label in sorted(fits):
            f = fits[label]
            r = np.asarray(f.radii, dtype=float)
            v = np.asarray(f.volumes, dtype=float)
            use = v > 0
            line = ax.loglog(r[use], v[use], "o", label=f"{label}: slope {f.slope:.2f}")[0]
            rr = np.geomspace(r.min(), r.max(), 32)
            ax.loglog(rr, np.exp(f.intercept) * rr ** f.slope, "-", color=line.get_color())
        ax.set_xlabel("r")
        ax.set_ylabel("tube volume")
        if title:
            ax.set_title(title)
        if fits:
            ax.legend(fontsize=8)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
        plt.close(fig)
    return path
