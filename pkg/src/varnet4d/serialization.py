"""On-disk formats: raw float64 blobs with JSON manifests, parameter
checkpoints, CSV tables, and 16-bit PGM snapshots.

Every artifact directory is self-describing: the manifest records shapes,
grid metadata, the generating configuration, and the seed, so any
consumer can reload the blobs without further context.
"""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from .prior import PriorConfig, PriorParams
from .solver import SolverConfig, SolverParams
from .state import FieldSeq, ObsSet, SeqData


def write_blob(path: Path, arr: np.ndarray) -> None:
    """Raw little-endian float64, C order."""
    Path(path).write_bytes(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_blob(path: Path, shape) -> np.ndarray:
    arr = np.frombuffer(Path(path).read_bytes(), dtype="<f8").astype(np.float64)
    return arr.reshape(shape)


def write_mask(path: Path, mask: np.ndarray) -> None:
    Path(path).write_bytes(np.ascontiguousarray(mask, dtype=np.uint8).tobytes())


def read_mask(path: Path, shape) -> np.ndarray:
    arr = np.frombuffer(Path(path).read_bytes(), dtype=np.uint8)
    return arr.reshape(shape).astype(bool)


def write_json(path: Path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path: Path):
    return json.loads(Path(path).read_text())


def config_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


def write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def write_pgm16(path: Path, field: np.ndarray) -> None:
    """16-bit portable graymap; the linear scale is recorded in a comment."""
    arr = np.asarray(field, dtype=np.float64)
    vmin, vmax = float(arr.min()), float(arr.max())
    scale = (vmax - vmin) or 1.0
    q = np.round((arr - vmin) / scale * 65535).astype(">u2")
    header = f"P5\n# scale vmin={vmin:.9e} vmax={vmax:.9e}\n{arr.shape[1]} {arr.shape[0]}\n65535\n"
    Path(path).write_bytes(header.encode() + q.tobytes())


# ---------------------------------------------------------------------------
# datasets

def save_dataset(out_dir: Path, data: SeqData, configs: dict, seed: int,
                 extras: dict[str, np.ndarray] | None = None) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    T, H, W = data.truth.shape
    files = {
        "truth": "truth.f64",
        "obs_values": "obs_values.f64",
        "obs_mask": "obs_mask.u8",
        "oi": "oi.f64",
    }
    write_blob(out_dir / files["truth"], data.truth.values)
    write_blob(out_dir / files["obs_values"], data.obs.values.values)
    write_mask(out_dir / files["obs_mask"], data.obs.mask)
    write_blob(out_dir / files["oi"], data.oi.values)
    for name, arr in (extras or {}).items():
        fname = f"{name}.u8" if arr.dtype == bool else f"{name}.f64"
        if arr.dtype == bool:
            write_mask(out_dir / fname, arr)
        else:
            write_blob(out_dir / fname, arr)
        files[name] = fname
    manifest = {
        "format": "varnet4d-dataset-v1",
        "shape": [T, H, W],
        "cell_deg": data.truth.cell_deg,
        "dt_days": data.truth.dt_days,
        "dtype": "<f8",
        "seed": seed,
        "configs": configs,
        "files": files,
    }
    write_json(out_dir / "manifest.json", manifest)


def load_dataset(in_dir: Path) -> tuple[SeqData, dict]:
    in_dir = Path(in_dir)
    man = read_json(in_dir / "manifest.json")
    shape = tuple(man["shape"])
    g = dict(cell_deg=man["cell_deg"], dt_days=man["dt_days"])
    files = man["files"]
    data = SeqData(
        truth=FieldSeq(read_blob(in_dir / files["truth"], shape), **g),
        obs=ObsSet(
            FieldSeq(read_blob(in_dir / files["obs_values"], shape), **g),
            read_mask(in_dir / files["obs_mask"], shape),
        ),
        oi=FieldSeq(read_blob(in_dir / files["oi"], shape), **g),
    )
    return data, man


# ---------------------------------------------------------------------------
# checkpoints

def save_checkpoint(
    out_dir: Path,
    prior_params: PriorParams,
    solver_params: SolverParams,
    seed: int,
    cfg_hash: str,
    extra: dict | None = None,
) -> None:
    """Concatenated float64 blob plus a manifest of layer names/shapes."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    layers, chunks, offset = [], [], 0
    for scope, params in (("prior", prior_params), ("solver", solver_params)):
        for name, t in params.named_parameters():
            layers.append(
                {"name": f"{scope}.{name}", "shape": list(t.data.shape), "offset": offset}
            )
            chunks.append(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
            offset += t.data.size
    (out_dir / "params.bin").write_bytes(b"".join(chunks))
    manifest = {
        "format": "varnet4d-checkpoint-v1",
        "layers": layers,
        "seed": seed,
        "config_hash": cfg_hash,
        "prior_config": vars(prior_params.cfg),
        "solver_config": vars(solver_params.cfg),
    }
    if extra:
        manifest.update(extra)
    write_json(out_dir / "checkpoint.json", manifest)


def load_checkpoint(in_dir: Path) -> tuple[PriorParams, SolverParams, dict]:
    in_dir = Path(in_dir)
    man = read_json(in_dir / "checkpoint.json")
    raw = np.frombuffer((in_dir / "params.bin").read_bytes(), dtype="<f8")
    prior_cfg = PriorConfig(**man["prior_config"])
    solver_cfg = SolverConfig(**man["solver_config"])
    pp = PriorParams.init(prior_cfg, seed=0)
    sp = SolverParams.init(solver_cfg, seed=0)
    lookup = {f"prior.{k}": t for k, t in pp.named_parameters()}
    lookup.update({f"solver.{k}": t for k, t in sp.named_parameters()})
    for layer in man["layers"]:
        t = lookup[layer["name"]]
        n = int(np.prod(layer["shape"]))
        t.data = raw[layer["offset"] : layer["offset"] + n].reshape(layer["shape"]).copy()
    return pp, sp, man
