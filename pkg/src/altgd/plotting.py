"""PNG figures for CLI reports. Needs the optional ``plot`` extra (matplotlib)."""

from __future__ import annotations


def _pyplot():
    try:
        import matplotlib
    except ImportError as exc:  # pragma: no cover - depends on the environment
        raise RuntimeError("plotting needs matplotlib: pip install 'altgd[plot]'") from exc
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def line_plot(path, x, series, title="", xlabel="t", ylabel="value", logx=False, logy=False):
    """One line per entry of ``series`` (label -> values) against ``x``."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, ys in series.items():
        ax.plot(x, ys, label=label, lw=1.2)
    if logx:
        ax.set_xscale("log")
    if logy:
        ax.set_yscale("log")
    ax.set(title=title, xlabel=xlabel, ylabel=ylabel)
    if len(series) > 1:
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def phase_plot(path, x, y, title=""):
    """Orbit of a scalar two-player run in the (x, y) plane."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.plot(x, y, ".-", ms=3, lw=0.6)
    ax.plot(x[:1], y[:1], "o", color="tab:red", label="start")
    ax.set(title=title, xlabel="x", ylabel="y")
    ax.set_aspect("equal", adjustable="datalim")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def polygon_plot(path, polygons, title=""):
    """Closed polygons given as lists of integer vertices, one per step."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 5))
    for label, verts in polygons.items():
        xs = [float(v[0]) for v in verts] + [float(verts[0][0])]
        ys = [float(v[1]) for v in verts] + [float(verts[0][1])]
        ax.plot(xs, ys, lw=1, label=label)
    ax.set(title=title, xlabel="x", ylabel="y")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def interval_plot(path, labels, means, lows, highs, title="", ylabel="ratio"):
    """Means with interval whiskers, one per label."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    pos = range(len(labels))
    err = [[m - lo for m, lo in zip(means, lows)], [hi - m for m, hi in zip(means, highs)]]
    ax.errorbar(list(pos), means, yerr=err, fmt="o", capsize=4)
    ax.axhline(1.0, color="grey", lw=0.8, ls="--")
    ax.set_xticks(list(pos))
    ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=8)
    ax.set(title=title, ylabel=ylabel)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
