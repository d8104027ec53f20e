"""Static SVG charts.  Output is byte-stable for identical inputs."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_STYLE = {
    "svg.hashsalt": "funcextremile",
    "svg.fonttype": "none",
    "figure.figsize": (6.0, 4.5),
    "font.size": 10,
    "axes.grid": True,
    "grid.alpha": 0.3,
}


def _save(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)


def plot_extremile_profile(path, taus, values, label="", mean_value=None):
    """Estimated extremile (x) against its level tau (y) for one evaluation curve.

    ``mean_value`` adds a dotted vertical line at the tau = 1/2 estimate.
    """
    taus = np.asarray(taus, dtype=float)
    values = np.asarray(values, dtype=float)
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        ax.plot(values, taus, marker="o", color="tab:blue", label=label or None,
                gid="extremile-points")
        if mean_value is not None and np.isfinite(mean_value):
            ax.axvline(mean_value, linestyle=":", color="black", label="local linear mean")
        ax.set_xlabel("estimated conditional extremile")
        ax.set_ylabel("tau")
        ax.set_ylim(0.0, 1.0)
        if label:
            ax.set_title(label)
        ax.legend(loc="upper left")
        fig.tight_layout()
        _save(fig, path)


def plot_amse(path, taus, rows):
    """AMSE x 1e3 against tau; ``rows`` maps setting label to its already scaled values."""
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        for label, amse in rows.items():
            ax.plot(taus, np.asarray(amse, dtype=float), marker="o", label=label)
        ax.set_xlabel("tau")
        ax.set_ylabel("AMSE x 1e3")
        ax.legend(loc="upper center", fontsize=7)
        fig.tight_layout()
        _save(fig, path)
