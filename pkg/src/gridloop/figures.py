"""Figure rendering for run reports.

Renders the standard report plots from a :class:`~gridloop.sim.SimLog` to
PNG files next to the CSV series: line currents against their dashed
limits, bus voltages against their band, controllable injections, and the
cost/residual evolution.  Everything goes through the Agg backend; nothing
is displayed.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

from .sim import ComparisonReport, SimLog  # noqa: E402


def _finish(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def plot_currents(log: SimLog, path) -> Path:
    """Current magnitudes over time, dashed lines marking finite limits."""
    n_bus = len(log.meta["bus_ids"])
    t_min = log.t / 60.0
    fig, ax = plt.subplots(figsize=(7.5, 4.0))
    limits = log.meta.get("branch_limits", [])
    for j in range(log.meta["n_branch"]):
        series = log.y[:, n_bus + j]
        line, = ax.plot(t_min, series, lw=0.9)
        if j < len(limits) and limits[j] > 0 and np.max(series) > 0.5 * limits[j]:
            ax.axhline(limits[j], ls="--", lw=0.7, color=line.get_color(), alpha=0.6)
    ax.set_xlabel("time [min]")
    ax.set_ylabel("current magnitude [p.u.]")
    ax.set_title("Line currents")
    return _finish(fig, Path(path))


def plot_voltages(log: SimLog, path) -> Path:
    n_bus = len(log.meta["bus_ids"])
    t_min = log.t / 60.0
    fig, ax = plt.subplots(figsize=(7.5, 4.0))
    for i in range(n_bus):
        ax.plot(t_min, log.y[:, i], lw=0.9)
    ax.set_xlabel("time [min]")
    ax.set_ylabel("voltage magnitude [p.u.]")
    ax.set_title("Bus voltages")
    return _finish(fig, Path(path))


def plot_injections(log: SimLog, path) -> Path:
    """Active and reactive set-points of the controllable units, in MW/MVAr."""
    base = log.meta["base_mva"]
    t_min = log.t / 60.0
    fig, (ax_p, ax_q) = plt.subplots(2, 1, sharex=True, figsize=(7.5, 5.0))
    for k, bus in enumerate(log.meta["input_gen_bus"]):
        ax_p.plot(t_min, log.u[:, 2 * k] * base, lw=1.1, label=f"gen @ bus {bus}")
        ax_q.plot(t_min, log.u[:, 2 * k + 1] * base, lw=1.1)
    ax_p.set_ylabel("P set-point [MW]")
    ax_q.set_ylabel("Q set-point [MVAr]")
    ax_q.set_xlabel("time [min]")
    ax_p.legend(fontsize=8, ncol=2)
    ax_p.set_title("Controllable injections")
    return _finish(fig, Path(path))


def plot_costs(log: SimLog, path) -> Path:
    t_min = log.t / 60.0
    fig, (ax_c, ax_r) = plt.subplots(2, 1, sharex=True, figsize=(7.5, 5.0))
    for a in range(log.meta["n_areas"]):
        ax_c.plot(t_min, log.area_costs[:, a], lw=1.1, label=f"area {a + 1}")
    ax_c.plot(t_min, log.social_cost, "k--", lw=1.2, label="social")
    ax_c.set_ylabel("cost")
    ax_c.legend(fontsize=8)
    ax_c.set_title("Operating cost and fixed-point residual")
    ax_r.semilogy(t_min, np.maximum(log.residual, 1e-16), lw=1.1)
    ax_r.set_ylabel("residual")
    ax_r.set_xlabel("time [min]")
    return _finish(fig, Path(path))


def render_figures(log: SimLog, outdir) -> list[Path]:
    """Render the full report figure set; returns the written paths."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    return [
        plot_currents(log, outdir / "currents.png"),
        plot_voltages(log, outdir / "voltages.png"),
        plot_injections(log, outdir / "injections.png"),
        plot_costs(log, outdir / "costs.png"),
    ]


def plot_comparison(report: ComparisonReport, path) -> Path:
    """Grouped bars: per-area curtailed power and curtailment cost."""
    n = report.area_curtailed_mw_multi.size
    idx = np.arange(n)
    width = 0.38
    fig, (ax_mw, ax_cost) = plt.subplots(1, 2, figsize=(8.5, 3.8))
    ax_mw.bar(idx - width / 2, report.area_curtailed_mw_multi, width,
              label="multi-area")
    ax_mw.bar(idx + width / 2, report.area_curtailed_mw_central, width,
              label="centralized")
    ax_mw.set_xticks(idx, [f"area {a + 1}" for a in range(n)])
    ax_mw.set_ylabel("curtailed power [MW]")
    ax_mw.legend(fontsize=8)
    ax_cost.bar(idx - width / 2, report.area_curtail_cost_multi, width)
    ax_cost.bar(idx + width / 2, report.area_curtail_cost_central, width)
    ax_cost.set_xticks(idx, [f"area {a + 1}" for a in range(n)])
    ax_cost.set_ylabel("curtailment cost")
    fig.suptitle(f"multi-area / centralized cost ratio: {report.cost_ratio:.3f}",
                 fontsize=10)
    return _finish(fig, Path(path))
