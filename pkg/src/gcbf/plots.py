"""Figure rendering for the CLI report path.

Two figures accompany every run: the flight trajectory over the h contour
map (0-level set highlighted, obstacles drawn when present) and the
temporal plot of h with the applied input. Rendering always goes to files
through the Agg backend; nothing here opens a window.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["render_trajectory", "render_timeseries"]

_STYLE = {
    "figure.figsize": (6.0, 5.0),
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 10,
}


def render_trajectory(path, trace, grid=None, world=None, start=None, disk_radius=None):
    """Top-down trajectory over the barrier contour map."""
    path = Path(path)
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        if grid is not None:
            xs, ys, H = grid
            levels = np.linspace(float(np.min(H)), float(np.max(H)), 21)
            cf = ax.contourf(xs, ys, H, levels=levels, cmap="RdYlGn", alpha=0.8)
            fig.colorbar(cf, ax=ax, label="h")
            ax.contour(xs, ys, H, levels=[0.0], colors="k", linewidths=2.0)
        if world is not None:
            for obs in world.obstacles:
                ax.add_patch(
                    plt.Circle(obs.center, obs.radius, fill=False, color="crimson", lw=2.0)
                )
        if disk_radius is not None:
            ax.add_patch(
                plt.Circle((0.0, 0.0), disk_radius, fill=False, color="navy",
                           lw=1.5, ls="--")
            )
        rx, ry = trace.column("r_x"), trace.column("r_y")
        ax.plot(rx, ry, color="k", lw=1.0, label="trajectory")
        if start is not None:
            ax.plot([start[0]], [start[1]], "s", color="limegreen", ms=8, label="start")
        ax.plot([rx[-1]], [ry[-1]], "o", color="red", ms=7, label="end")
        ax.set_xlabel("x [m]")
        ax.set_ylabel("y [m]")
        ax.set_aspect("equal")
        ax.legend(loc="upper right", fontsize=8)
        fig.tight_layout()
        fig.savefig(path, dpi=130)
        plt.close(fig)


def render_timeseries(path, trace):
    """h(t) with the zero line, plus nominal vs rectified input magnitudes."""
    path = Path(path)
    with plt.rc_context(_STYLE):
        fig, (ax1, ax2) = plt.subplots(2, 1, sharex=True, figsize=(6.0, 5.5))
        t = trace.column("t")
        ax1.plot(t, trace.column("h_gp"), color="tab:blue", lw=1.0)
        ax1.axhline(0.0, color="k", lw=1.0, ls="--")
        ax1.set_ylabel("h")
        unom = np.linalg.norm(
            np.column_stack([trace.column(f"unom_{c}") for c in "xyz"]), axis=1
        )
        urect = np.linalg.norm(
            np.column_stack([trace.column(f"urect_{c}") for c in "xyz"]), axis=1
        )
        ax2.plot(t, unom, color="gray", lw=0.8, label="|u_nom|")
        ax2.plot(t, urect, color="tab:red", lw=0.8, label="|u_rect|")
        infeasible = trace.column("infeasible") > 0.5
        if np.any(infeasible):
            ax2.plot(t[infeasible], urect[infeasible], "x", color="k", ms=4,
                     label="infeasible")
        ax2.set_xlabel("t [s]")
        ax2.set_ylabel("input [m/s^2]")
        ax2.legend(loc="upper right", fontsize=8)
        fig.tight_layout()
        fig.savefig(path, dpi=130)
        plt.close(fig)
