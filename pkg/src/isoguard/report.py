"""Report files: a delimited summary plus matplotlib figures.

Figures are rendered with the Agg backend, so no display is needed.
"""

from __future__ import annotations

import csv
import os
from typing import Iterable, Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import networkx as nx  # noqa: E402

from isoguard.history import SO, WR, WW, DepEdge, DepGraph  # noqa: E402

_EDGE_COLOURS = {SO: "black", WR: "tab:blue", WW: "tab:red"}


def write_summary(path: str, rows: Iterable[Mapping[str, object]]) -> str:
    """Write ``rows`` as CSV; the header is the union of keys in first-seen order."""
    rows = list(rows)
    header: list[str] = []
    for r in rows:
        for k in r:
            if k not in header:
                header.append(k)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=header)
        w.writeheader()
        for r in rows:
            w.writerow({k: r.get(k, "") for k in header})
    return path


def plot_depth_profile(per_depth: Sequence[int], path: str, title: str = "") -> str:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bar(range(len(per_depth)), per_depth, color="tab:gray")
    ax.set_xlabel("depth")
    ax.set_ylabel("new states")
    ax.set_title(title or "states discovered per depth")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_walks(rows: Sequence[Mapping[str, object]], path: str, title: str = "") -> str:
    """One group of bars per walk: distinct states, restarts and violations."""
    seeds = [str(r["seed"]) for r in rows]
    fig, axes = plt.subplots(1, 3, figsize=(10, 3.2), sharex=True)
    for ax, field, colour in zip(
        axes, ("states", "restarts", "violations"), ("tab:blue", "tab:gray", "tab:red")
    ):
        ax.bar(seeds, [int(r[field]) for r in rows], color=colour)
        ax.set_title(field)
        ax.set_xlabel("seed")
        ax.tick_params(axis="x", labelrotation=90, labelsize=7)
    fig.suptitle(title or "random walks")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_dependency_graph(g: DepGraph, path: str, highlight: Sequence[DepEdge] = (), title: str = "") -> str:
    """Draw SO/WR/WW edges; edges of the witness cycle are drawn thick."""
    G = nx.MultiDiGraph()
    G.add_nodes_from(g.nodes)
    for e in g.edges:
        G.add_edge(e.src, e.dst, kind=e.kind, label=e.label())
    pos = nx.circular_layout(G) if len(g.nodes) > 2 else nx.spring_layout(G, seed=0)
    hl = set(highlight)
    fig, ax = plt.subplots(figsize=(6, 5))
    nx.draw_networkx_nodes(G, pos, ax=ax, node_color="white", edgecolors="black", node_size=1400)
    nx.draw_networkx_labels(G, pos, ax=ax, font_size=8)
    for i, e in enumerate(g.edges):
        # spread parallel edges with different curvature
        rad = 0.12 + 0.08 * (i % 3)
        nx.draw_networkx_edges(
            G,
            pos,
            edgelist=[(e.src, e.dst)],
            ax=ax,
            edge_color=_EDGE_COLOURS[e.kind],
            style="dashed" if e.kind == WW else "solid",
            width=3.0 if e in hl else 1.0,
            arrows=True,
            arrowsize=14,
            node_size=1400,
            connectionstyle=f"arc3,rad={rad}",
        )
    labels = {}
    for e in g.edges:
        labels.setdefault((e.src, e.dst), []).append(e.label())
    nx.draw_networkx_edge_labels(
        G, pos, edge_labels={k: ", ".join(v) for k, v in labels.items()}, ax=ax, font_size=7
    )
    ax.set_title(title or "dependency graph (SO black, WR blue, inferred WW red)")
    ax.axis("off")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def ensure_dir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path
