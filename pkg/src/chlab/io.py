"""Artifact serialization: CSV tables, JSON reports, and run manifests.

Formats are deterministic: floats use the shortest round-trip repr, JSON
keys are sorted, and manifests carry no timestamps, so rerunning a command
with the same config reproduces every byte.  A manifest plus the package
records everything needed to reproduce its run.
"""

import csv
import json
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, config_hash
from .dynamics import SCHEME_CONSTANTS
from .fields import Trajectory
from .noise import DERIVATION_RULE

MANIFEST_NAME = "manifest.json"


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    return str(x)


def write_csv(path: Path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        for row in rows:
            writer.writerow([_fmt(x) for x in row])


def write_json(path: Path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_plain(payload), fh, sort_keys=True, indent=1)
        fh.write("\n")


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


def trajectory_rows(traj: Trajectory):
    """One row per time step: t, then the n^d cell values (row-major)."""
    flat = traj.flat_values()
    header = ["t"] + [f"u{j}" for j in range(flat.shape[1])]
    yield header
    for t, row in zip(traj.times, flat):
        yield [t] + list(row)


def write_trajectory(out_dir: Path, name: str, traj: Trajectory) -> list:
    """CSV of the path plus a JSON sidecar with the grid metadata."""
    csv_name = f"{name}.csv"
    meta_name = f"{name}.json"
    write_csv(out_dir / csv_name, trajectory_rows(traj))
    n = traj.values.shape[1]
    meta = {"dim": traj.dim, "n": n, "steps": traj.steps, "dt": traj.dt,
            "T": float(traj.times[-1]),
            "columns": "t, then cell values in row-major order",
            "meta": {k: _plain(v) for k, v in traj.meta.items()
                     if k != "seed"}}
    if traj.meta.get("seed") is not None:
        seed = traj.meta["seed"]
        meta["seed"] = {"master": seed.master, "replica": seed.replica,
                        "rule": seed.rule}
    write_json(out_dir / meta_name, meta)
    return [csv_name, meta_name]


def read_trajectory(path: Path) -> Trajectory:
    with open(path, "r", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    data = np.array([[float(x) for x in row] for row in rows[1:]])
    return Trajectory(times=data[:, 0], values=data[:, 1:], dim=1)


def write_manifest(out_dir: Path, command: str, cfg: RunConfig,
                   artifacts: list, extra: dict | None = None) -> None:
    manifest = {
        "command": command,
        "config": _plain(cfg.raw),
        "config_sha256": config_hash(_plain(cfg.raw)),
        "package": "chlab",
        "version": __version__,
        "seed_rule": DERIVATION_RULE,
        "master_seed": cfg.master_seed,
        "scheme": dict(SCHEME_CONSTANTS),
        "solver": {"save_every": cfg.solver.save_every,
                   "blowup_threshold": cfg.solver.blowup_threshold,
                   "stability_limit": cfg.solver.stability_limit,
                   "tol_mild": cfg.solver.tol_mild},
        "artifacts": sorted(artifacts),
    }
    if extra:
        manifest.update(_plain(extra))
    write_json(out_dir / MANIFEST_NAME, manifest)
