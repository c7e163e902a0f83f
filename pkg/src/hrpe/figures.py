"""Figure rendering for scenario reports.

Every scenario writes its numbers to JSON/CSV/tensor files first; these
helpers render the companion PNGs.  All functions take data plus an output
path and return the path, so callers can list what was produced.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_DPI = 150


def _finish(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=_DPI, bbox_inches="tight")
    plt.close(fig)
    return path


def apdp_comparison(delay_ns, curves: dict[str, np.ndarray], path,
                    title: str = "Averaged power delay profile") -> Path:
    """Overlay APDP curves (dB) over delay; ``curves`` maps label -> power."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    floor = None
    for label, power in curves.items():
        power = np.asarray(power, dtype=float)
        db = 10.0 * np.log10(np.maximum(power, 1e-300))
        ax.plot(delay_ns, db, label=label, linewidth=1.2)
        floor = db.max() if floor is None else max(floor, db.max())
    ax.set_xlabel("delay (ns)")
    ax.set_ylabel("power (dB)")
    ax.set_title(title)
    if floor is not None:
        ax.set_ylim(floor - 90, floor + 5)
    ax.grid(True, alpha=0.3)
    ax.legend()
    return _finish(fig, path)


def singular_values(values, path,
                    title: str = "Leading singular values") -> Path:
    fig, ax = plt.subplots(figsize=(5.5, 4))
    values = np.asarray(values, dtype=float)
    ax.semilogy(np.arange(1, values.size + 1), values, "o-")
    ax.set_xlabel("index")
    ax.set_ylabel("singular value")
    ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    return _finish(fig, path)


def objective_trace(trace, path,
                    title: str = "Constrained fit objective") -> Path:
    fig, ax = plt.subplots(figsize=(5.5, 4))
    trace = np.asarray(trace, dtype=float)
    ax.semilogy(np.maximum(trace, 1e-300), "s-")
    ax.set_xlabel("outer iteration")
    ax.set_ylabel("squared misfit")
    ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    return _finish(fig, path)


def sweep_curve(x, y, path, xlabel: str, ylabel: str, title: str = "",
                annotate_band: tuple[float, float] | None = None) -> Path:
    fig, ax = plt.subplots(figsize=(5.5, 4))
    ax.plot(x, y, "o-")
    if annotate_band is not None:
        ax.axhspan(*annotate_band, alpha=0.15, color="green")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.grid(True, alpha=0.3)
    return _finish(fig, path)


def aps_heatmap(azimuth_deg, power, path, title: str = "Beamforming spectrum",
                marks: list[tuple[float, float]] | None = None) -> Path:
    """Departure-vs-arrival azimuth power map in dB, optional truth marks."""
    fig, ax = plt.subplots(figsize=(5.8, 4.8))
    power = np.asarray(power, dtype=float)
    db = 10.0 * np.log10(np.maximum(power, 1e-300))
    db -= db.max()
    extent = (azimuth_deg[0], azimuth_deg[-1], azimuth_deg[0], azimuth_deg[-1])
    im = ax.imshow(db.T, origin="lower", extent=extent, aspect="auto",
                   vmin=-30, vmax=0, cmap="viridis")
    if marks:
        ax.plot([m[0] for m in marks], [m[1] for m in marks], "rx",
                markersize=9, markeredgewidth=2)
    ax.set_xlabel("departure azimuth (deg)")
    ax.set_ylabel("arrival azimuth (deg)")
    ax.set_title(title)
    fig.colorbar(im, ax=ax, label="relative power (dB)")
    return _finish(fig, path)
