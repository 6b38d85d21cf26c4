"""File formats: atomic writes, deterministic CSV/JSON, datasets and SVG heatmaps."""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from copvae import simulator as sim
from copvae.errors import ConfigurationError

DATASET_FILE = "dataset.csv"
SCALER_FILE = "scaler.json"
DECODER_FILE = "decoder.json"


def atomic_write(path, data):
    """Write ``data`` (str or bytes) to a temp file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"newline": ""})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def fmt(x):
    """Shortest round-trip text for a number."""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def csv_text(header, rows, config_hash=None):
    buf = io.StringIO()
    if config_hash is not None:
        buf.write(f"# config_hash: {config_hash}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v) for v in row])
    return buf.getvalue()


def write_csv(path, header, rows, config_hash=None):
    atomic_write(path, csv_text(header, rows, config_hash))


def read_csv(path):
    """(header, rows of strings), skipping ``#`` comment lines."""
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.reader(lines)
    header = next(reader)
    return header, list(reader)


def json_text(obj):
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def write_json(path, obj):
    atomic_write(path, json_text(obj))


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


# ---------------------------------------------------------------- dataset

def feature_columns(n_dof):
    return [f"dof{i + 1}_{name}" for i in range(n_dof) for name in sim.FEATURE_NAMES]


def dataset_rows(ds: sim.Dataset):
    for i in range(len(ds)):
        yield [int(ds.ids[i]), ds.split[i], *ds.env[i], *ds.z[i], *ds.m[i]]


def save_dataset(directory, ds: sim.Dataset, config_hash):
    directory = Path(directory)
    n_dof = ds.n_features // len(sim.FEATURE_NAMES)
    header = ["id", "split", "hs", "tp", "wv", "z1", "z2", *feature_columns(n_dof)]
    write_csv(directory / DATASET_FILE, header, dataset_rows(ds), config_hash)
    write_json(directory / SCALER_FILE, {"config_hash": config_hash,
                                         "features": feature_columns(n_dof),
                                         "scaler": ds.scaler.to_dict()})


def load_dataset(directory) -> sim.Dataset:
    directory = Path(directory)
    header, rows = read_csv(directory / DATASET_FILE)
    if header[:7] != ["id", "split", "hs", "tp", "wv", "z1", "z2"]:
        raise ConfigurationError(f"{directory / DATASET_FILE} has an unexpected header")
    ids = np.array([int(r[0]) for r in rows])
    split = np.array([r[1] for r in rows])
    num = np.array([[float(v) for v in r[2:]] for r in rows])
    scaler = sim.MinMaxScaler.from_dict(read_json(directory / SCALER_FILE)["scaler"])
    return sim.Dataset(ids, split, num[:, :3], num[:, 3:5], num[:, 5:], scaler)


# ---------------------------------------------------------------- figures

_VIRIDIS = np.array([
    [68, 1, 84], [72, 40, 120], [62, 74, 137], [49, 104, 142], [38, 130, 142],
    [31, 158, 137], [53, 183, 121], [110, 206, 88], [181, 222, 43], [253, 231, 37],
], dtype=float)


def colour(t):
    """Hex colour for t in [0, 1] on a viridis-like ramp."""
    t = float(np.clip(t, 0.0, 1.0)) * (len(_VIRIDIS) - 1)
    i = min(int(t), len(_VIRIDIS) - 2)
    rgb = _VIRIDIS[i] + (t - i) * (_VIRIDIS[i + 1] - _VIRIDIS[i])
    return "#{:02x}{:02x}{:02x}".format(*np.round(rgb).astype(int))


def heatmap_svg(panels, title, config_hash, marker=None, size=180, pad=24):
    """Standalone SVG with one density panel per (label, grid) pair.

    ``grid[i, j]`` is the density at (z1 = axis[i], z2 = axis[j]); z1 runs
    left to right and z2 bottom to top. Each panel is scaled to its own max.
    ``marker`` optionally marks a reference point (z1, z2) in every panel.
    """
    n = panels[0][1].shape[0]
    cell = size / n
    width = len(panels) * (size + pad) + pad
    height = size + 2 * pad + 16
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f"<title>{escape(title)}</title>",
        f'<desc>config_hash={escape(config_hash)}</desc>',
        f'<metadata><config_hash>{escape(config_hash)}</config_hash></metadata>',
        f'<text x="{pad}" y="14" font-family="sans-serif" font-size="11">'
        f"{escape(title)} [config {escape(config_hash)}]</text>",
    ]
    for p, (label, grid) in enumerate(panels):
        x0 = pad + p * (size + pad)
        y0 = pad + 8
        g = np.asarray(grid, dtype=float)
        top = g.max() if np.isfinite(g).all() and g.max() > 0 else 1.0
        out.append(f'<g id="panel{p}">')
        out.append(f'<text x="{x0}" y="{y0 - 4}" font-family="sans-serif" font-size="10">'
                   f"{escape(label)}</text>")
        for i in range(n):
            for j in range(n):
                x = x0 + i * cell
                y = y0 + (n - 1 - j) * cell
                out.append(f'<rect x="{x:.2f}" y="{y:.2f}" width="{cell:.2f}" '
                           f'height="{cell:.2f}" fill="{colour(g[i, j] / top)}"/>')
        out.append(f'<rect x="{x0}" y="{y0}" width="{size}" height="{size}" fill="none" '
                   f'stroke="black" stroke-width="0.5"/>')
        if marker is not None:
            mx, my = x0 + marker[0] * size, y0 + (1 - marker[1]) * size
            out.append(f'<circle cx="{mx:.2f}" cy="{my:.2f}" r="3" fill="none" '
                       f'stroke="red" stroke-width="1"/>')
        out.append(f'<text x="{x0}" y="{y0 + size + 12}" font-family="sans-serif" '
                   f'font-size="9">z1 -&gt; / z2 ^</text>')
        out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"
