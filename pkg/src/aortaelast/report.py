"""Side-by-side PNG figures for qualitative inspection of reconstructions."""

from __future__ import annotations

import numpy as np
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .datagen import GridSample


def render_report(truth: GridSample, out_path, itr: GridSample | None = None,
                  dl: GridSample | None = None, dpi=150):
    """One row of displacement panels, one row of modulus panels.

    Modulus panels share a color scale anchored on the truth so the
    reconstructions are visually comparable.
    """
    recons = [("reconstructed (iterative)", itr), ("reconstructed (network)", dl)]
    recons = [(t, s) for t, s in recons if s is not None]
    n_cols = 2 + max(1, len(recons))
    fig, axes = plt.subplots(2, n_cols, figsize=(3.2 * n_cols, 6.4))

    extent = None
    if truth.grid is not None:
        g = truth.grid
        extent = [g.origin[0] * 1e3, (g.origin[0] + g.width * g.pixel_pitch) * 1e3,
                  (g.origin[1] + g.height * g.pixel_pitch) * 1e3, g.origin[1] * 1e3]

    def show(ax, img, title, cmap, vmin=None, vmax=None):
        im = ax.imshow(img, cmap=cmap, vmin=vmin, vmax=vmax, extent=extent)
        ax.set_title(title, fontsize=9)
        ax.set_xticks([])
        ax.set_yticks([])
        fig.colorbar(im, ax=ax, shrink=0.8)

    show(axes[0, 0], np.where(truth.mask, truth.u_x_norm, np.nan) * 1e6,
         "lateral displacement (um/kPa)", "RdBu_r")
    show(axes[0, 1], np.where(truth.mask, truth.u_y_norm, np.nan) * 1e6,
         "depth displacement (um/kPa)", "RdBu_r")
    mag = np.hypot(truth.u_x_norm, truth.u_y_norm)
    show(axes[0, 2], np.where(truth.mask, mag, np.nan) * 1e6,
         "displacement magnitude (um/kPa)", "viridis")
    for j in range(3, n_cols):
        axes[0, j].axis("off")

    vmax = float(truth.modulus.max()) / 1e3 or None
    show(axes[1, 0], np.where(truth.mask, truth.modulus, np.nan) / 1e3,
         "shear modulus, truth (kPa)", "magma", vmin=0, vmax=vmax)
    col = 1
    for title, s in recons:
        show(axes[1, col], np.where(s.mask, s.modulus, np.nan) / 1e3,
             title + " (kPa)", "magma", vmin=0, vmax=vmax)
        col += 1
    for j in range(col, n_cols):
        axes[1, j].axis("off")

    fig.tight_layout()
    fig.savefig(out_path, dpi=dpi)
    plt.close(fig)
    return out_path
