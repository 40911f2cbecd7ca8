"""Plot-ready file output: CSV grids, histories, graymaps, manifests.

Coefficient grids are written as plain CSV with one row per mesh row
(y ascending, x left to right) at 17 significant digits, which
round-trips float64 exactly.  Graymaps are binary PGM (P5) with the
min/max scaling recorded in a comment line; image rows run top to
bottom (y descending).
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import InvalidArgumentError

FLOAT_FMT = "%.17g"


def write_grid_csv(values: np.ndarray, nx: int, ny: int, path) -> Path:
    values = np.asarray(values, dtype=np.float64)
    if values.size != nx * ny:
        raise InvalidArgumentError(f"grid of {values.size} values does not fill {nx} x {ny}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, values.reshape(ny, nx), fmt=FLOAT_FMT, delimiter=",")
    return path


def read_grid_csv(path) -> np.ndarray:
    grid = np.atleast_2d(np.loadtxt(path, delimiter=","))
    return grid.ravel()


def write_vector_csv(values: np.ndarray, path, header: str | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, np.asarray(values, dtype=np.float64), fmt=FLOAT_FMT,
               header=header or "", comments="# " if header else "#")
    return path


def read_vector_csv(path) -> np.ndarray:
    return np.atleast_1d(np.loadtxt(path, comments="#"))


def write_history_csv(values: np.ndarray, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    values = np.asarray(values, dtype=np.float64)
    rows = np.column_stack([np.arange(values.size), values])
    np.savetxt(path, rows, fmt=("%d", FLOAT_FMT), delimiter=",", header="iteration,objective")
    return path


def write_pgm(values: np.ndarray, nx: int, ny: int, path) -> Path:
    """8-bit binary graymap, min-max scaled; scaling recorded in the header."""
    values = np.asarray(values, dtype=np.float64)
    if values.size != nx * ny:
        raise InvalidArgumentError(f"grid of {values.size} values does not fill {nx} x {ny}")
    lo, hi = float(values.min()), float(values.max())
    span = hi - lo if hi > lo else 1.0
    pixels = np.round((values.reshape(ny, nx) - lo) / span * 255.0).astype(np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = f"P5\n# min={lo:.17g} max={hi:.17g} rows-top-to-bottom\n{nx} {ny}\n255\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(pixels[::-1, :].tobytes())
    return path


def write_json(obj, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


def read_json(path) -> dict:
    return json.loads(Path(path).read_text())


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path) -> str:
    return sha256_bytes(Path(path).read_bytes())


def write_manifest(directory, inputs: dict[str, str], outputs: list[Path]) -> Path:
    """Machine-readable record of input hashes and produced files."""
    directory = Path(directory)
    entries = {
        "inputs": dict(sorted(inputs.items())),
        "outputs": {
            str(p.relative_to(directory)): sha256_file(p) for p in sorted(outputs)
        },
    }
    return write_json(entries, directory / "manifest.json")
