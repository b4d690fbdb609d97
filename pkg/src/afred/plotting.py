"""Optional matplotlib figures for reduction grids and regularity profiles.

matplotlib is imported lazily so the rest of the package never needs it.
"""

import numpy as np


def _pyplot():
    try:
        import matplotlib

        matplotlib.use("Agg", force=False)
        import matplotlib.pyplot as plt
    except ImportError as exc:
        raise ImportError("plotting needs matplotlib; install the 'plot' extra") from exc
    return plt


def plot_grid(result, component=0, ax=None):
    """Plot ``f_eps(k)[component]`` against the first kernel coordinate, one line per parameter point."""
    plt = _pyplot()
    if ax is None:
        _, ax = plt.subplots(figsize=(5, 3.5))
    by_eps = {}
    for row in result.rows():
        by_eps.setdefault(tuple(np.round(row.epsilon, 15)), []).append((row.k[0], row.f[component]))
    for eps, pts in by_eps.items():
        pts.sort()
        x, y = zip(*pts)
        ax.plot(x, y, marker="o", ms=3, label="eps=" + ", ".join(f"{e:g}" for e in eps))
    ax.axhline(0.0, color="0.6", lw=0.8)
    ax.set_xlabel("k")
    ax.set_ylabel(f"f[{component}]")
    ax.legend(fontsize="small")
    return ax


def plot_profile(report, ax=None):
    """Semilog plot of the regularity-profile columns along the parameter path."""
    plt = _pyplot()
    if ax is None:
        _, ax = plt.subplots(figsize=(5, 3.5))
    table = np.asarray(report.details["table"])
    x = np.arange(len(table))
    for j, name in enumerate(report.details["columns"]):
        ax.semilogy(x, np.maximum(table[:, j], 1e-18), marker="o", label=name)
    ax.set_xticks(x)
    ax.set_xticklabels([",".join(f"{e:g}" for e in eps) for eps in report.details["epsilon_path"]],
                       rotation=45, fontsize="small")
    ax.set_xlabel("epsilon")
    ax.set_ylabel("sup difference")
    ax.legend(fontsize="small")
    return ax


def save(ax, path):
    ax.figure.tight_layout()
    ax.figure.savefig(path, dpi=120)
    return path
