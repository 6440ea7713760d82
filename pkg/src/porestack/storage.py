"""On-disk layout for simulations and ensembles, plus a manifest-driven
import adapter for externally produced datasets.

Native layout, one directory per simulation:

    <sim_dir>/manifest.json     id, channels, grid, steps, dtype, dt_index
    <sim_dir>/step_00000.npy    one (C, H, W) float32 array per step

An ensemble directory holds `index.json` (member ids and the split) and a
`sims/` subdirectory with one native simulation directory per member.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .data import Ensemble, Simulation
from .errors import DataError, MissingInputError

MANIFEST_NAME = "manifest.json"
INDEX_NAME = "index.json"
STEP_DTYPE = np.float32


def _step_name(t: int) -> str:
    return f"step_{t:05d}.npy"


def write_simulation(sim: Simulation, sim_dir: str | Path) -> Path:
    sim_dir = Path(sim_dir)
    sim_dir.mkdir(parents=True, exist_ok=True)
    arrays = [np.asarray(s, dtype=STEP_DTYPE) for s in sim.states]
    manifest = {
        "id": sim.id,
        "channels": list(sim.channels),
        "grid": [int(x) for x in sim.grid_shape],
        "steps": sim.n_steps,
        "dtype": "float32",
        "dt_index": sim.dt_index,
    }
    with open(sim_dir / MANIFEST_NAME, "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    for t, arr in enumerate(arrays):
        np.save(sim_dir / _step_name(t), arr)
    return sim_dir


def read_simulation(sim_dir: str | Path) -> Simulation:
    sim_dir = Path(sim_dir)
    manifest_path = sim_dir / MANIFEST_NAME
    if not manifest_path.is_file():
        raise MissingInputError(f"no {MANIFEST_NAME} in {sim_dir}")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    for key in ("id", "channels", "steps"):
        if key not in manifest:
            raise DataError(f"{manifest_path}: missing manifest key {key!r}")
    states = []
    for t in range(int(manifest["steps"])):
        step_path = sim_dir / _step_name(t)
        if not step_path.is_file():
            raise MissingInputError(f"missing step file {step_path}")
        states.append(np.load(step_path))
    return Simulation(
        id=manifest["id"],
        channels=tuple(manifest["channels"]),
        states=states,
        dt_index=int(manifest.get("dt_index", 1)),
    )


def write_ensemble(ensemble: Ensemble, out_dir: str | Path) -> Path:
    out_dir = Path(out_dir)
    (out_dir / "sims").mkdir(parents=True, exist_ok=True)
    for sim in ensemble.simulations:
        write_simulation(sim, out_dir / "sims" / sim.id)
    index = {
        "simulations": sorted(sim.id for sim in ensemble.simulations),
        "split": dict(sorted(ensemble.split.items())),
    }
    with open(out_dir / INDEX_NAME, "w") as fh:
        json.dump(index, fh, indent=2)
        fh.write("\n")
    return out_dir


def read_ensemble(data_dir: str | Path) -> Ensemble:
    data_dir = Path(data_dir)
    index_path = data_dir / INDEX_NAME
    if not index_path.is_file():
        raise MissingInputError(f"no {INDEX_NAME} in {data_dir}")
    with open(index_path) as fh:
        index = json.load(fh)
    sims = [read_simulation(data_dir / "sims" / sim_id)
            for sim_id in index["simulations"]]
    return Ensemble(sims, dict(index.get("split", {})))


def write_split(ensemble: Ensemble, data_dir: str | Path) -> None:
    """Rewrite only the split assignment in an existing ensemble index."""
    data_dir = Path(data_dir)
    index_path = data_dir / INDEX_NAME
    if not index_path.is_file():
        raise MissingInputError(f"no {INDEX_NAME} in {data_dir}")
    with open(index_path) as fh:
        index = json.load(fh)
    index["split"] = dict(sorted(ensemble.split.items()))
    with open(index_path, "w") as fh:
        json.dump(index, fh, indent=2)
        fh.write("\n")


def import_ensemble(src_dir: str | Path, import_manifest: str | Path | dict,
                    out_dir: str | Path) -> Ensemble:
    """Convert an external dataset into the native layout.

    The import manifest names each member file and maps external array
    keys to canonical channel names.  Two layouts are supported:

    * ``npz_per_sim``: each member is an ``.npz`` whose arrays are keyed
      by external channel names, each of shape (N, H, W).  Requires a
      ``channel_map`` of external key to canonical name.
    * ``npy_stack_per_sim``: each member is a single ``.npy`` of shape
      (N, C, H, W) plus a ``channel_order`` list of external names in
      axis-1 order, translated through ``channel_map``.

    All four physical channels must be present after mapping.  Values are
    cast to float32.  The converted ensemble is written to ``out_dir``
    and returned (without a split; apply one separately).
    """
    src_dir = Path(src_dir)
    if isinstance(import_manifest, (str, Path)):
        path = Path(import_manifest)
        if not path.is_file():
            raise MissingInputError(f"import manifest {path} not found")
        with open(path) as fh:
            import_manifest = json.load(fh)
    layout = import_manifest.get("layout")
    channel_map = import_manifest.get("channel_map", {})
    members = import_manifest.get("simulations")
    if layout not in ("npz_per_sim", "npy_stack_per_sim"):
        raise DataError(f"unsupported import layout {layout!r}")
    if not members:
        raise DataError("import manifest lists no simulations")

    sims = []
    for member in members:
        sim_id, rel = member.get("id"), member.get("file")
        if not sim_id or not rel:
            raise DataError(f"import member needs 'id' and 'file': {member}")
        src = src_dir / rel
        if not src.is_file():
            raise MissingInputError(f"import source {src} not found")
        if layout == "npz_per_sim":
            with np.load(src) as payload:
                mapped = {}
                for ext, canon in channel_map.items():
                    if ext not in payload:
                        raise DataError(f"{src}: missing array {ext!r}")
                    mapped[canon] = np.asarray(payload[ext], dtype=STEP_DTYPE)
        else:
            stack = np.load(src)
            order = member.get("channel_order", import_manifest.get("channel_order"))
            if not order:
                raise DataError(f"{src}: npy_stack_per_sim needs 'channel_order'")
            if stack.ndim != 4 or stack.shape[1] != len(order):
                raise DataError(
                    f"{src}: expected (N, {len(order)}, H, W), got {stack.shape}"
                )
            mapped = {
                channel_map.get(ext, ext): np.asarray(stack[:, k], dtype=STEP_DTYPE)
                for k, ext in enumerate(order)
            }
        missing = [c for c in ("C", "eps", "Ux", "Uy") if c not in mapped]
        if missing:
            raise DataError(f"{src}: channel map leaves {missing} unmapped")
        channels = ("C", "eps", "Ux", "Uy")
        per_channel = [mapped[c] for c in channels]
        n_steps = {arr.shape[0] for arr in per_channel}
        if len(n_steps) != 1:
            raise DataError(f"{src}: channels disagree on step count {sorted(n_steps)}")
        values = np.stack(per_channel, axis=1)
        sims.append(Simulation.from_array(sim_id, values, channels))

    ensemble = Ensemble(sims)
    write_ensemble(ensemble, out_dir)
    return ensemble
