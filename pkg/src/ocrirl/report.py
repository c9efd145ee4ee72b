"""Aggregate curve CSVs into one plot-ready table; optional matplotlib figures."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .artifacts import read_curves


@dataclass
class CurveTable:
    """Long-format rows ``(name, label, t, mean, stderr, n_runs)``."""

    rows: list = field(default_factory=list)

    def names(self) -> list[str]:
        seen = []
        for r in self.rows:
            if r[0] not in seen:
                seen.append(r[0])
        return seen

    def series(self, name):
        rs = [r for r in self.rows if r[0] == name]
        return (rs[0][1], np.array([r[2] for r in rs]), np.array([r[3] for r in rs]),
                np.array([r[4] for r in rs]))

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write("curve,axis,t,mean_return,stderr,n_runs\n")
            for name, label, t, m, se, n in self.rows:
                f.write(f"{name},{label},{t},{m:.17g},{se:.17g},{n}\n")


def aggregate(paths) -> CurveTable:
    table = CurveTable()
    for p in paths:
        per_run, mean, se, label = read_curves(p)
        name = Path(p).stem
        for t in range(len(mean)):
            table.rows.append((name, label, t, float(mean[t]), float(se[t]), per_run.shape[0]))
    return table


def render_figures(table: CurveTable, out_dir, smooth=1) -> list[Path]:
    """One PNG per x-axis kind (episodes, iterations), mean with a stderr band per curve."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    by_axis = {}
    for name in table.names():
        by_axis.setdefault(table.series(name)[0], []).append(name)
    written = []
    for axis, names in by_axis.items():
        fig, ax = plt.subplots(figsize=(6, 4))
        for name in names:
            _, t, m, se = table.series(name)
            if smooth > 1 and len(m) >= smooth:
                kern = np.ones(smooth) / smooth
                m = np.convolve(m, kern, mode="valid")
                se = np.convolve(se, kern, mode="valid")
                t = t[smooth - 1:]
            ax.plot(t, m, label=name, lw=1.2)
            ax.fill_between(t, m - se, m + se, alpha=0.25)
        ax.set_xlabel(axis)
        ax.set_ylabel("return (default reward)")
        ax.legend(frameon=False, fontsize=8)
        fig.tight_layout()
        path = out_dir / f"curves_{axis}.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)
    return written
