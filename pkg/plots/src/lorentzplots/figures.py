"""Render simulator CSV artifacts into publication-style figures.

Strict consumer of the primary package's CSV format: leading '# key:
json' metadata lines (the config echo is mandatory) followed by a
header row.  Rendering is a pure function of the CSV plus the figure
spec: fonts and DPI are pinned so identical inputs give identical
pixels.  No simulation code is imported here.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib
import numpy as np

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

DPI = 120

KINDS = ("quiver", "density1d", "density2d", "series-decay", "response-fit")

REQUIRED_COLUMNS = {
    "quiver": ["x", "y", "v1", "v2", "weight"],
    "density1d": ["bin_left", "bin_right", "density", "stderr"],
    "density2d": ["x", "y", "density", "stderr"],
    "series-decay": ["k", "T_k", "stderr"],
    "response-fit": ["epsilon", "nu_f", "stderr"],
}


class FigureError(ValueError):
    """Input CSV is unusable for the requested figure kind."""


@dataclass
class FigureSpec:
    kind: str
    inputs: list
    output: str
    title: str = ""
    xlabel: str = ""
    ylabel: str = ""
    style: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise FigureError(f"unknown figure kind {self.kind!r}; "
                              f"expected one of {', '.join(KINDS)}")
        if not self.inputs:
            raise FigureError("at least one input CSV is required")


def read_artifact(path) -> tuple[dict, dict]:
    """Parse a simulator CSV into (meta, columns-of-floats)."""
    meta = {}
    header = None
    rows = []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            key, _, val = line[1:].partition(":")
            meta[key.strip()] = json.loads(val.strip())
        elif header is None:
            header = line.split(",")
        elif line:
            rows.append(line.split(","))
    if header is None:
        raise FigureError(f"{path}: no header row found")
    if "config_echo" not in meta:
        raise FigureError(f"{path}: missing config echo; refusing to plot "
                          "an artifact of unknown provenance")
    data = {}
    arr = np.array(rows, dtype=str)
    for j, name in enumerate(header):
        data[name] = np.array([float(v) for v in arr[:, j]])
    return meta, data


def _check_columns(path, data, kind):
    missing = [c for c in REQUIRED_COLUMNS[kind] if c not in data]
    if missing:
        raise FigureError(f"{path}: missing column(s) {', '.join(missing)} "
                          f"required by kind {kind!r}")


def _discs_from_echo(meta):
    try:
        return meta["config_echo"]["table"]["discs"]
    except (KeyError, TypeError):
        return []


def _draw_table(ax, meta):
    """Scatterer silhouettes (with periodic copies) from the config echo."""
    for d in _discs_from_echo(meta):
        cx, cy = d["center"]
        for ox in (-1, 0, 1):
            for oy in (-1, 0, 1):
                ax.add_patch(plt.Circle((cx + ox, cy + oy), d["radius"],
                                        facecolor="0.82", edgecolor="0.4",
                                        linewidth=0.8, zorder=1))
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1)
    ax.set_aspect("equal")


def _new_figure():
    plt.rcParams.update({
        "font.family": "DejaVu Sans",
        "font.size": 10,
        "figure.dpi": DPI,
        "savefig.dpi": DPI,
    })
    return plt.figure(figsize=(6.0, 4.8))


def render(spec: FigureSpec) -> str:
    """Write the figure image for a validated spec; returns the path."""
    arts = [read_artifact(p) for p in spec.inputs]
    for (path, (meta, data)) in zip(spec.inputs, arts):
        _check_columns(path, data, spec.kind)
    fig = _new_figure()
    ax = fig.add_subplot(111)
    draw = {
        "quiver": _render_quiver,
        "density1d": _render_density1d,
        "density2d": _render_density2d,
        "series-decay": _render_series,
        "response-fit": _render_fit,
    }[spec.kind]
    draw(ax, arts, spec)
    if spec.title:
        ax.set_title(spec.title)
    if spec.xlabel:
        ax.set_xlabel(spec.xlabel)
    if spec.ylabel:
        ax.set_ylabel(spec.ylabel)
    out = Path(spec.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(out)
    plt.close(fig)
    return str(out)


def _render_quiver(ax, arts, spec):
    meta, data = arts[0]
    _draw_table(ax, meta)
    x, y = data["x"], data["y"]
    v1 = np.nan_to_num(data["v1"])
    v2 = np.nan_to_num(data["v2"])
    cell = _cell_size(x)
    vmax = float(np.hypot(v1, v2).max())
    # documented rule: the longest arrow spans 0.8 cell widths
    scale = (vmax / (0.8 * cell)) if vmax > 0 else 1.0
    ax.quiver(x, y, v1, v2, angles="xy", scale_units="xy", scale=scale,
              width=0.002, color="#1f4e9c", zorder=2)
    ax.set_xlabel(spec.xlabel or "x")
    ax.set_ylabel(spec.ylabel or "y")


def _cell_size(x):
    ux = np.unique(x)
    return float(ux[1] - ux[0]) if len(ux) > 1 else 1.0


def _render_density1d(ax, arts, spec):
    for i, (meta, data) in enumerate(arts):
        centers = 0.5 * (data["bin_left"] + data["bin_right"])
        label = meta.get("variable", f"input {i}")
        eps = _epsilon(meta)
        if eps is not None:
            label = f"{label}, field {eps:g}"
        ax.plot(centers, data["density"], "-", lw=1.2, label=label)
        ax.fill_between(centers, data["density"] - data["stderr"],
                        data["density"] + data["stderr"], alpha=0.3)
    ax.set_xlabel(spec.xlabel or "value")
    ax.set_ylabel(spec.ylabel or "density")
    ax.legend(loc="lower center", fontsize=8)


def _epsilon(meta):
    try:
        return meta["config_echo"]["force"]["epsilon"]
    except (KeyError, TypeError):
        return None


def _render_density2d(ax, arts, spec):
    meta, data = arts[0]
    x, y, dens = data["x"], data["y"], data["density"]
    n = int(round(math.sqrt(len(x))))
    img = dens.reshape(n, n).T
    ax.imshow(img, origin="lower", extent=(0, 1, 0, 1), cmap="viridis",
              interpolation="nearest")
    for d in _discs_from_echo(meta):
        cx, cy = d["center"]
        for ox in (-1, 0, 1):
            for oy in (-1, 0, 1):
                ax.add_patch(plt.Circle((cx + ox, cy + oy), d["radius"],
                                        fill=False, edgecolor="w",
                                        linewidth=0.7))
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1)
    ax.set_xlabel(spec.xlabel or "x")
    ax.set_ylabel(spec.ylabel or "y")


def _render_series(ax, arts, spec):
    meta, data = arts[0]
    k = data["k"]
    mag = np.abs(data["T_k"])
    ok = mag > 0
    ax.semilogy(k[ok], mag[ok], "o-", ms=4, lw=1.0, label="|T_k|")
    ax.semilogy(k, data["stderr"], ":", lw=1.0, color="0.5", label="stderr")
    if ok.sum() >= 3:
        coef = np.polyfit(k[ok], np.log(mag[ok]), 1)
        ax.semilogy(k, np.exp(np.polyval(coef, k)), "--", lw=1.0,
                    color="#b03030",
                    label=f"fit slope {coef[0]:.2f}")
    ax.set_xlabel(spec.xlabel or "k")
    ax.set_ylabel(spec.ylabel or "|T_k|")
    ax.legend(fontsize=8)


def _render_fit(ax, arts, spec):
    meta, data = arts[0]
    eps, y, err = data["epsilon"], data["nu_f"], data["stderr"]
    ax.errorbar(eps, y, yerr=err, fmt="o", ms=4, capsize=3, label="measured")
    w = 1.0 / np.maximum(err, 1e-300) ** 2
    xb = (w * eps).sum() / w.sum()
    yb = (w * y).sum() / w.sum()
    b = (w * (eps - xb) * (y - yb)).sum() / (w * (eps - xb) ** 2).sum()
    a = yb - b * xb
    xs = np.linspace(0, eps.max() * 1.05, 50)
    ax.plot(xs, a + b * xs, "--", lw=1.0,
            label=f"fit slope {b:.4g}")
    ax.set_xlabel(spec.xlabel or "field strength")
    ax.set_ylabel(spec.ylabel or "steady-state average")
    ax.legend(fontsize=8)
