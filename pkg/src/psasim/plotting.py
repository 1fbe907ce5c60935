"""PNG figures for command-line reports. Uses the non-interactive Agg backend."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .dsp import Spectrum  # noqa: E402
from .lattice import CoilGeometry, LatticeSpec, preset_region  # noqa: E402

# fixed metadata keeps PNG bytes reproducible
_META = {"Software": None}


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)
    return path


def plot_spectra(spectra: Mapping[str, Spectrum], path: str | Path, title: str = "") -> Path:
    """Overlay of labelled spectra, frequency in MHz."""
    fig, ax = plt.subplots(figsize=(8, 4))
    for label, s in spectra.items():
        ax.plot(s.frequencies / 1e6, s.bins, lw=0.8, label=label)
    ax.set_xlabel("frequency (MHz)")
    ax.set_ylabel("magnitude (dBV)")
    ax.set_xlim(0, max(s.frequencies[-1] for s in spectra.values()) / 1e6)
    if title:
        ax.set_title(title)
    ax.legend(loc="upper right", fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    return _save(fig, path)


def plot_spectrum_grid(spectra: Mapping[int, Spectrum], path: str | Path, title: str = "") -> Path:
    """One small panel per preset sensor, laid out like the die."""
    fig, axes = plt.subplots(4, 4, figsize=(12, 9), sharex=True, sharey=True)
    lo = min(float(s.bins.min()) for s in spectra.values())
    hi = max(float(s.bins.max()) for s in spectra.values())
    for k in range(16):
        ax = axes[k // 4, k % 4]
        if k in spectra:
            s = spectra[k]
            ax.plot(s.frequencies / 1e6, s.bins, lw=0.5)
        ax.set_title(f"sensor {k}", fontsize=8)
        ax.set_ylim(lo - 3, hi + 3)
        ax.tick_params(labelsize=7)
    for ax in axes[-1]:
        ax.set_xlabel("MHz", fontsize=8)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    return _save(fig, path)


def plot_heat_map(
    heat_map: Mapping[int, float],
    path: str | Path,
    threshold_db: float | None = None,
    refined_region=None,
    spec: LatticeSpec = LatticeSpec(),
) -> Path:
    """Per-sensor max delta in dB on the 4 x 4 preset grid, with the refined
    rectangle drawn on a die-scale inset."""
    grid = np.full((4, 4), np.nan)
    for k, v in heat_map.items():
        grid[k // 4, k % 4] = v
    fig, (ax, ax2) = plt.subplots(1, 2, figsize=(10, 4.5))
    im = ax.imshow(grid, cmap="viridis")
    for k, v in heat_map.items():
        ax.text(k % 4, k // 4, f"{k}\n{v:.1f}", ha="center", va="center", fontsize=8, color="w")
    ax.set_xticks(range(4))
    ax.set_yticks(range(4))
    ax.set_title("max delta (dB) per sensor" + (f", threshold {threshold_db:g} dB" if threshold_db else ""))
    fig.colorbar(im, ax=ax, shrink=0.8)

    n_rows, n_cols = spec.cell_shape
    ax2.set_xlim(0, n_cols)
    ax2.set_ylim(n_rows, 0)
    ax2.set_aspect("equal")
    for k in range(16):
        r0, r1, c0, c1 = preset_region(k, spec)
        ax2.add_patch(plt.Rectangle((c0, r0), c1 - c0, r1 - r0, fill=False, lw=0.4, ec="0.6"))
    if refined_region is not None:
        r0, r1, c0, c1 = refined_region
        ax2.add_patch(plt.Rectangle((c0, r0), c1 - c0, r1 - r0, fill=True, alpha=0.5, fc="tab:red"))
    ax2.set_title("refined region (cells)")
    ax2.set_xlabel("column")
    ax2.set_ylabel("row")
    fig.tight_layout()
    return _save(fig, path)


def plot_winding_map(coil: CoilGeometry, path: str | Path) -> Path:
    w = coil.winding_map
    fig, ax = plt.subplots(figsize=(5.5, 5))
    m = max(1, int(np.abs(w).max()))
    im = ax.imshow(w, cmap="RdBu_r", vmin=-m, vmax=m, extent=(0, w.shape[1], w.shape[0], 0))
    ys, xs = zip(*coil.path)
    ax.plot(xs, ys, "k-", lw=1)
    for r, c in coil.terminals:
        ax.plot(c, r, "o", ms=5, mfc="y", mec="k")
    ax.set_title(f"turns={coil.turns}  R={coil.resistance:.1f} ohm")
    ax.set_xlabel("column")
    ax.set_ylabel("row")
    fig.colorbar(im, ax=ax, shrink=0.8, label="winding number")
    fig.tight_layout()
    return _save(fig, path)


def plot_snr(table: Mapping[str, float], path: str | Path) -> Path:
    labels = list(table)
    fig, ax = plt.subplots(figsize=(9, 3.5))
    ax.bar(range(len(labels)), [table[k] for k in labels], color="tab:blue")
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=45, fontsize=8)
    ax.set_ylabel("SNR (dB)")
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    return _save(fig, path)
