"""Matplotlib figures for benchmark runs (written to files, never shown)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.collections import PolyCollection  # noqa: E402

_STYLE = {"tnnmg": dict(marker="o", color="tab:blue", label="TNNMG"),
          "predcorr": dict(marker="s", color="tab:orange", label="predictor-corrector")}


def _save(fig, path):
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_iterations(summary, path):
    """Iterations per time step, one line per (level, solver)."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for (level, solver), rows in _group(summary).items():
        steps = [r["step"] for r in rows]
        its = [r["iterations"] for r in rows]
        style = dict(_STYLE.get(solver, {}))
        style["label"] = f"{style.get('label', solver)}, level {level}"
        style["color"] = None
        ax.plot(steps, its, **style)
    ax.set_xlabel("time step")
    ax.set_ylabel("iterations")
    ax.set_xticks(range(1, 1 + max(r["step"] for r in summary)))
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_walltime(summary, path):
    """Wall time per iteration per degree of freedom, averaged per step."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for (level, solver), rows in _group(summary).items():
        style = dict(_STYLE.get(solver, {}))
        style["label"] = f"{style.get('label', solver)}, level {level}"
        style["color"] = None
        ax.semilogy([r["step"] for r in rows], [r["us_per_iter_dof"] for r in rows], **style)
    ax.set_xlabel("time step")
    ax.set_ylabel("wall time / (iteration dof) [us]")
    ax.grid(alpha=0.3, which="both")
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_errors(iterations, path, steps=None):
    """Reference error against iteration number for selected steps."""
    fig, ax = plt.subplots(figsize=(6, 4))
    drawn = False
    groups = {}
    for r in iterations:
        if not np.isfinite(r["err"]):
            continue
        if steps is not None and r["step"] not in steps:
            continue
        groups.setdefault((r["level"], r["solver"], r["step"]), []).append(r)
    for (level, solver, step), rows in sorted(groups.items()):
        err = np.array([r["err"] for r in rows])
        err = np.maximum(err, 1e-16)
        ls = "-" if solver == "tnnmg" else "--"
        ax.semilogy([r["iter"] for r in rows], err, ls, marker=".",
                    label=f"{solver} L{level} step {step}")
        drawn = True
    ax.set_xlabel("iteration")
    ax.set_ylabel("error to reference")
    ax.grid(alpha=0.3, which="both")
    if drawn:
        ax.legend(fontsize=7, ncol=2)
    return _save(fig, path)


def plot_plastic_zone(mesh, plastic, path, title=""):
    """Filled mesh with plastic elements highlighted."""
    fig, ax = plt.subplots(figsize=(5, 5))
    polys = mesh.vertices[mesh.triangles]
    colors = np.where(np.asarray(plastic, dtype=bool), "tab:red", "whitesmoke")
    ax.add_collection(PolyCollection(polys, facecolors=colors, edgecolors="0.6", linewidths=0.1))
    ax.set_xlim(mesh.vertices[:, 0].min(), mesh.vertices[:, 0].max())
    ax.set_ylim(mesh.vertices[:, 1].min(), mesh.vertices[:, 1].max())
    ax.set_aspect("equal")
    ax.set_title(title)
    return _save(fig, path)


def _group(summary):
    out = {}
    for r in summary:
        out.setdefault((r["level"], r["solver"]), []).append(r)
    return dict(sorted(out.items()))
