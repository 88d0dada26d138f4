"""Rendering primitives: convergence curves and Gram heatmaps.

Inputs follow the trainer's export formats exactly: metrics.csv with the
fixed ten-column header, gram.csv as a headerless square matrix of values in
[0, 1], and gram_meta.json carrying cumulative class boundaries. Malformed
inputs raise InputFormatError; the CLI maps that to a nonzero exit.
"""

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

METRICS_COLUMNS = (
    "epoch", "objective", "delta_r", "rate", "rate_c", "var_objective",
    "m_penalty", "ce_loss", "wall_ms", "latched",
)


class InputFormatError(ValueError):
    """An input file does not match its export schema."""


def _read_metrics(path: Path) -> tuple[str, np.ndarray, np.ndarray]:
    """Parse one metrics.csv into (objective, epochs, delta_r values)."""
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            rows = list(reader)
    except OSError as exc:
        raise InputFormatError(f"{path}: {exc}") from exc
    if header != list(METRICS_COLUMNS):
        raise InputFormatError(
            f"{path}: header {header} does not match the metrics schema"
        )
    if not rows:
        raise InputFormatError(f"{path}: no data rows")
    epochs, values, objectives = [], [], set()
    for row in rows:
        if len(row) != len(METRICS_COLUMNS):
            raise InputFormatError(f"{path}: row width {len(row)} != schema width")
        try:
            epochs.append(int(row[0]))
            values.append(float(row[2]))
        except ValueError as exc:
            raise InputFormatError(f"{path}: unparsable epoch/delta_r: {exc}") from exc
        objectives.add(row[1])
    objective = ",".join(sorted(objectives))
    return objective, np.asarray(epochs), np.asarray(values)


def render_curves(metrics_paths, out_png) -> dict:
    """Plot delta-R versus epoch, one line per metrics file.

    Returns the sidecar payload (series names in plot order) after writing
    both the raster image and ``<out_png>.json``.
    """
    if not metrics_paths:
        raise InputFormatError("no metrics files given")
    series = []
    fig, ax = plt.subplots(figsize=(6, 4))
    for path in metrics_paths:
        path = Path(path)
        objective, epochs, values = _read_metrics(path)
        name = f"{path.stem}:{objective}"
        ax.plot(epochs, values, label=name)
        series.append(name)
    ax.set_xlabel("epoch")
    ax.set_ylabel("coding rate reduction")
    ax.legend()
    fig.tight_layout()
    out_png = Path(out_png)
    fig.savefig(out_png, dpi=120)
    plt.close(fig)
    sidecar = {"kind": "curves", "series": series}
    _write_sidecar(out_png, sidecar)
    return sidecar


def render_heatmap(gram_csv, meta_json, out_png) -> dict:
    """Plot a class-sorted |Z^T Z| heatmap with class-boundary gridlines.

    The color scale is fixed to [0, 1]. Returns the sidecar payload (the
    boundary indices actually drawn) after writing the image and sidecar.
    """
    try:
        gram = np.loadtxt(gram_csv, delimiter=",", ndmin=2)
    except (OSError, ValueError) as exc:
        raise InputFormatError(f"{gram_csv}: {exc}") from exc
    if gram.ndim != 2 or gram.shape[0] != gram.shape[1]:
        raise InputFormatError(
            f"{gram_csv}: expected a square matrix, got shape {gram.shape}"
        )
    try:
        with open(meta_json) as fh:
            meta = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputFormatError(f"{meta_json}: {exc}") from exc
    for key in ("classes", "boundaries"):
        if key not in meta:
            raise InputFormatError(f"{meta_json}: missing key {key!r}")
    boundaries = meta["boundaries"]
    if boundaries[0] != 0 or boundaries[-1] != gram.shape[0]:
        raise InputFormatError(
            f"{meta_json}: boundaries {boundaries} do not span the matrix"
        )
    inner = [int(b) for b in boundaries[1:-1]]

    fig, ax = plt.subplots(figsize=(5, 5))
    ax.imshow(gram, vmin=0.0, vmax=1.0, cmap="viridis", interpolation="nearest")
    for b in inner:
        ax.axhline(b - 0.5, color="white", linewidth=0.8)
        ax.axvline(b - 0.5, color="white", linewidth=0.8)
    ax.set_xticks([])
    ax.set_yticks([])
    fig.tight_layout()
    out_png = Path(out_png)
    fig.savefig(out_png, dpi=120)
    plt.close(fig)
    sidecar = {
        "kind": "heatmap",
        "classes": [int(c) for c in meta["classes"]],
        "boundaries": inner,
        "size": int(gram.shape[0]),
    }
    _write_sidecar(out_png, sidecar)
    return sidecar


def _write_sidecar(out_png: Path, payload: dict) -> None:
    with open(str(out_png) + ".json", "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
