"""Figure rendering for the analyze stage.

Matplotlib (Agg backend) renders the speed and acceleration distributions,
the two calibration correction-factor heatmaps, and a lane/speed scatter of
the recorded vehicles next to the delimited outputs.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

# no creation dates inside the PNGs: re-runs must be byte-identical
_PNG_META = {"Software": "trafficbev"}


def _save(fig, path):
    fig.savefig(path, dpi=110, metadata=_PNG_META)
    plt.close(fig)
    return str(path)


def _hist_figure(rows, xlabel, title, color):
    fig, ax = plt.subplots(figsize=(6, 3.5))
    if rows:
        lefts = [lo for lo, _, _ in rows]
        width = rows[0][1] - rows[0][0]
        ax.bar(lefts, [c for _, _, c in rows], width=width, align="edge",
               color=color, edgecolor="black", linewidth=0.3)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("count")
    ax.set_title(title)
    ax.spines["top"].set_visible(False)
    ax.spines["right"].set_visible(False)
    fig.tight_layout()
    return fig


def _heatmap_figure(grid, extent, title):
    fig, ax = plt.subplots(figsize=(6, 2.6))
    im = ax.imshow(grid, origin="lower", aspect="auto", cmap="viridis",
                   extent=(0, extent[0], 0, extent[1]))
    fig.colorbar(im, ax=ax, label="correction factor (1/px)")
    ax.set_xlabel("BEV x (px)")
    ax.set_ylabel("BEV y (px)")
    ax.set_title(title)
    fig.tight_layout()
    return fig


def render_figures(out_dir, speed_rows, accel_rows, model, records) -> list[str]:
    out = Path(out_dir)
    written = [
        _save(_hist_figure(speed_rows, "speed (mph)", "Speed distribution", "#4878a8"),
              out / "speed_hist.png"),
        _save(_hist_figure(accel_rows, "acceleration (m/s^2)", "Acceleration distribution", "#a85448"),
              out / "accel_hist.png"),
        _save(_heatmap_figure(model.k_w_grid, model.grid_size, "Width-layer correction factor"),
              out / "calibration_width.png"),
        _save(_heatmap_figure(model.k_h_grid, model.grid_size, "Height-layer correction factor"),
              out / "calibration_height.png"),
    ]

    fig, ax = plt.subplots(figsize=(6, 3.5))
    if records:
        for direction, marker in ((1, "o"), (2, "s")):
            xs = [r.lane for r in records if r.direction == direction]
            ys = [r.mean_speed_mph for r in records if r.direction == direction]
            if xs:
                ax.scatter(xs, ys, marker=marker, alpha=0.6, label=f"direction {direction}")
        ax.legend(loc="best")
    ax.set_xlabel("lane (1 = innermost)")
    ax.set_ylabel("mean speed (mph)")
    ax.set_title("Lane speeds")
    ax.spines["top"].set_visible(False)
    ax.spines["right"].set_visible(False)
    fig.tight_layout()
    written.append(_save(fig, out / "lane_speeds.png"))
    return written
