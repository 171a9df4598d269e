"""
Grid, trajectory and path serialization

Binary layout: a JSON header file ``<stem>.json`` describing the arrays and a
flat ``<stem>.bin`` file of little-endian float64 values in row-major order,
arrays concatenated in header order.
"""

import csv
import json
import logging
from pathlib import Path
from typing import Dict, List, Tuple, Union

import numpy as np

from models import DensityField, DiffusionTrajectory, ManifoldSpec, TransportPath
from services.errors import GridError
from services.manifold import ManifoldGrid, build_grid
from utils.helpers import format_float

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
DTYPE = "<f8"

PathLike = Union[str, Path]


def _write_arrays(stem: Path, header: Dict, arrays: List[Tuple[str, np.ndarray]]) -> Path:
    stem.parent.mkdir(parents=True, exist_ok=True)
    header = dict(header)
    header["format_version"] = FORMAT_VERSION
    header["dtype"] = "float64-le"
    header["order"] = "row-major"
    header["arrays"] = [{"name": name, "shape": list(a.shape)} for name, a in arrays]
    with open(stem.with_suffix(".bin"), "wb") as fh:
        for _, a in arrays:
            fh.write(np.ascontiguousarray(a, dtype=DTYPE).tobytes(order="C"))
    json_path = stem.with_suffix(".json")
    json_path.write_text(json.dumps(header, indent=2, sort_keys=True))
    logger.debug(f"Wrote {json_path} ({len(arrays)} arrays)")
    return json_path


def _read_arrays(stem: Path) -> Tuple[Dict, Dict[str, np.ndarray]]:
    json_path, bin_path = stem.with_suffix(".json"), stem.with_suffix(".bin")
    if not json_path.exists() or not bin_path.exists():
        raise FileNotFoundError(f"missing header or data file for {stem}")
    header = json.loads(json_path.read_text())
    if header.get("format_version") != FORMAT_VERSION:
        raise GridError(f"unsupported format version {header.get('format_version')} in {json_path}")
    flat = np.fromfile(bin_path, dtype=DTYPE)
    expected = sum(int(np.prod(entry["shape"])) for entry in header["arrays"])
    if flat.size != expected:
        raise GridError(f"{bin_path} holds {flat.size} values, header announces {expected}")
    arrays, offset = {}, 0
    for entry in header["arrays"]:
        n = int(np.prod(entry["shape"]))
        arrays[entry["name"]] = flat[offset:offset + n].reshape(entry["shape"]).astype(float)
        offset += n
    return header, arrays


def _stem(path: PathLike) -> Path:
    path = Path(path)
    return path.with_suffix("") if path.suffix in (".json", ".bin") else path


# ==================== grids ====================

def save_grid(grid: ManifoldGrid, path: PathLike) -> Path:
    """
    Save a grid description and its quadrature weights

    Args:
        grid: Grid to save
        path: Output stem (``.json``/``.bin`` are appended)

    Returns:
        Path of the JSON header
    """
    header = {
        "type": "grid",
        "kind": grid.kind.value,
        "resolution": list(grid.shape),
        "length": grid.length,
        "node_count": grid.size,
    }
    return _write_arrays(_stem(path), header, [("weights", grid.vol_weights)])


def load_grid(path: PathLike) -> ManifoldGrid:
    """Rebuild a grid from disk; the stored weights must match the rebuilt ones"""
    header, arrays = _read_arrays(_stem(path))
    if header.get("type") != "grid":
        raise GridError(f"{path} does not hold a grid")
    grid = build_grid(ManifoldSpec(kind=header["kind"], resolution=header["resolution"], length=header["length"]))
    if header["node_count"] != grid.size or not np.allclose(arrays["weights"], grid.vol_weights, rtol=1e-14, atol=0):
        raise GridError(f"stored weights in {path} do not match a rebuilt {grid.spec.label()} grid")
    return grid


# ==================== trajectories and paths ====================

def save_trajectory(trajectory: DiffusionTrajectory, path: PathLike) -> Path:
    grid = trajectory.final.grid
    header = {"type": "trajectory", "manifold": grid.spec.label()}
    states = np.stack([s.values for s in trajectory.states])
    return _write_arrays(
        _stem(path), header,
        [("times", trajectory.times), ("rho", states), ("entropies", trajectory.entropies)],
    )


def load_trajectory(path: PathLike, grid: ManifoldGrid) -> DiffusionTrajectory:
    header, arrays = _read_arrays(_stem(path))
    if header.get("type") != "trajectory" or header.get("manifold") != grid.spec.label():
        raise GridError(f"{path} does not hold a trajectory on {grid.spec.label()}")
    states = [DensityField(values=r, grid=grid) for r in arrays["rho"]]
    return DiffusionTrajectory(times=arrays["times"], states=states, entropies=arrays["entropies"])


def save_path(path_data: TransportPath, path: PathLike) -> Path:
    grid = path_data.rho[0].grid
    header = {
        "type": "transport_path",
        "manifold": grid.spec.label(),
        "w2_sq_estimate": path_data.w2_sq_estimate,
        "iterations": path_data.iterations,
    }
    arrays = [
        ("s", path_data.s_nodes),
        ("rho", np.stack([r.values for r in path_data.rho])),
        ("phi", np.stack(path_data.phi)),
        ("action", path_data.action_per_s),
    ]
    if path_data.drift is not None:
        arrays.append(("drift", path_data.drift))
    return _write_arrays(_stem(path), header, arrays)


def write_trajectory_csv(trajectory: DiffusionTrajectory, path: PathLike) -> Path:
    """Long-format CSV with columns t,node,rho; node is the row-major flat index"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", "node", "rho"])
        for t, state in zip(trajectory.times, trajectory.states):
            tt = format_float(t)
            for node, value in enumerate(state.values.ravel()):
                writer.writerow([tt, node, format_float(value)])
    return path


def write_path_csv(path_data: TransportPath, path: PathLike) -> Path:
    """Long-format CSV with columns s,node,rho,phi"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["s", "node", "rho", "phi"])
        for s, rho, phi in zip(path_data.s_nodes, path_data.rho, path_data.phi):
            ss = format_float(s)
            for node, (r, p) in enumerate(zip(rho.values.ravel(), np.asarray(phi).ravel())):
                writer.writerow([ss, node, format_float(r), format_float(p)])
    return path
