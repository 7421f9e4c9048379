"""Figures for the CLI reports.

Every function takes the same rows the CLI writes as CSV and saves one
figure to ``path``.  Figures are built on :class:`matplotlib.figure.Figure`
directly, so no pyplot state or interactive backend is involved.
"""

from collections import defaultdict

import numpy as np
from matplotlib.figure import Figure


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)


def plot_nonstat(rows, path, switch_step=None):
    """Mean one-step loss per layer against step, shaded by one standard error.

    ``rows`` are ``(step, layer_name, seed, loss)`` tuples.
    """
    by_layer = defaultdict(lambda: defaultdict(list))
    for step, layer, _seed, loss in rows:
        by_layer[layer][step].append(loss)
    fig = Figure(figsize=(6.4, 4.0))
    ax = fig.add_subplot()
    for layer in sorted(by_layer):
        steps = np.array(sorted(by_layer[layer]))
        losses = [np.asarray(by_layer[layer][s]) for s in steps]
        mean = np.array([l.mean() for l in losses])
        se = np.array([l.std(ddof=1) / np.sqrt(l.size) if l.size > 1 else 0.0 for l in losses])
        (line,) = ax.plot(steps, mean, lw=1.2, label=layer)
        lo = np.maximum(mean - se, mean * 1e-3)
        ax.fill_between(steps, lo, mean + se, color=line.get_color(), alpha=0.2, lw=0)
    if switch_step is not None:
        ax.axvline(switch_step, color="0.5", ls=":", lw=1)
    ax.set_yscale("log")
    ax.set_xlabel("step t")
    ax.set_ylabel("one-step loss")
    ax.legend(frameon=False, fontsize="small")
    _save(fig, path)


def plot_mqar(rows, path):
    """Recall accuracy against context length, one line per (layer, P).

    ``rows`` are ``(P, T, d_model, embedding_kind, layer_name, accuracy, n)``.
    """
    lines = defaultdict(list)
    for P, T, _d, kind, layer, acc, _n in rows:
        lines[(layer, P, kind)].append((T, acc))
    fig = Figure(figsize=(6.4, 4.0))
    ax = fig.add_subplot()
    for (layer, P, kind), pts in sorted(lines.items()):
        pts.sort()
        ax.plot([t for t, _ in pts], [a for _, a in pts], marker="o", ms=4, label=f"{layer}, P={P} ({kind})")
    ax.set_xscale("log", base=2)
    ax.set_ylim(-0.02, 1.02)
    ax.set_xlabel("sequence length T")
    ax.set_ylabel("recall accuracy")
    ax.legend(frameon=False, fontsize="small")
    _save(fig, path)


def plot_bound(rows, path):
    """Output norm against its bound, with the ``y = bound`` line.

    ``rows`` are ``(instance, y_norm, bound, ratio)``.
    """
    y = np.array([r[1] for r in rows])
    b = np.array([r[2] for r in rows])
    fig = Figure(figsize=(4.8, 4.8))
    ax = fig.add_subplot()
    ax.scatter(b, y, s=10)
    top = max(b.max(), y.max())
    ax.plot([0, top], [0, top], color="0.5", ls="--", lw=1)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("bound")
    ax.set_ylabel("|y|")
    _save(fig, path)


def plot_equiv(rows, path):
    """Deviation of each check next to its tolerance.

    ``rows`` are ``(check, max_deviation, tolerance, status)``.
    """
    names = [r[0] for r in rows]
    dev = np.array([r[1] for r in rows])
    tol = np.array([r[2] for r in rows])
    floor = 1e-18
    pos = np.arange(len(rows))
    fig = Figure(figsize=(6.4, 0.35 * len(rows) + 1.2))
    ax = fig.add_subplot()
    colors = ["tab:green" if r[3] == "pass" else "tab:red" for r in rows]
    ax.barh(pos, np.maximum(dev, floor), color=colors, left=floor)
    ax.scatter(np.maximum(tol, floor), pos, marker="|", s=200, color="k", zorder=3)
    ax.set_yticks(pos, names, fontsize="small")
    ax.set_xscale("log")
    ax.invert_yaxis()
    ax.set_xlabel("max deviation (| marks tolerance)")
    _save(fig, path)
