"""On-disk formats.

Dataset file layout::

    b"SUDS0001" | uint64 LE header length | UTF-8 JSON header | float64 LE payload

The payload is the state tensor in row-major [time, space, variable] order.
Model files are plain JSON.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .core import CorruptFile, Dataset, DiscoveredModel, SindyError, SpatialGrid, TimeGrid

MAGIC = b"SUDS0001"


def dumps_json(obj) -> str:
    # repr-exact floats, stable key order -> byte-identical round trips
    return json.dumps(obj, sort_keys=True, indent=1, allow_nan=True) + "\n"


def dataset_to_bytes(ds: Dataset) -> bytes:
    header = {
        "grid": ds.grid.to_dict(),
        "times": ds.time.times.tolist(),
        "shape": list(ds.states.shape),
        "n_vars": ds.n_vars,
        "noise_sigma": ds.noise_sigma,
        "seed": ds.seed,
        "system": ds.system,
    }
    hb = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = np.ascontiguousarray(ds.states, dtype="<f8").tobytes()
    return MAGIC + struct.pack("<Q", len(hb)) + hb + payload


def dataset_from_bytes(raw: bytes) -> Dataset:
    try:
        if raw[:8] != MAGIC:
            raise CorruptFile("not a dataset file (bad magic)")
        (n,) = struct.unpack("<Q", raw[8:16])
        header = json.loads(raw[16:16 + n].decode("utf-8"))
        shape = tuple(header["shape"])
        payload = raw[16 + n:]
        if len(payload) != 8 * int(np.prod(shape)):
            raise CorruptFile("payload size does not match header shape")
        states = np.frombuffer(payload, dtype="<f8").reshape(shape).astype(np.float64)
        return Dataset(SpatialGrid.from_dict(header["grid"]), TimeGrid(np.array(header["times"])),
                       states, header.get("noise_sigma"), header.get("seed"), header.get("system"))
    except CorruptFile:
        raise
    except (SindyError, ValueError, KeyError, TypeError, struct.error, UnicodeDecodeError) as e:
        raise CorruptFile(f"cannot parse dataset: {e}") from e


def save_dataset(ds: Dataset, path) -> None:
    Path(path).write_bytes(dataset_to_bytes(ds))


def load_dataset(path) -> Dataset:
    return dataset_from_bytes(Path(path).read_bytes())


def model_to_json(model: DiscoveredModel) -> str:
    return dumps_json(model.to_dict())


def model_from_json(text: str) -> DiscoveredModel:
    try:
        return DiscoveredModel.from_dict(json.loads(text))
    except (SindyError, ValueError, KeyError, TypeError) as e:
        raise CorruptFile(f"cannot parse model: {e}") from e


def save_model(model: DiscoveredModel, path) -> None:
    Path(path).write_text(model_to_json(model))


def load_model(path) -> DiscoveredModel:
    return model_from_json(Path(path).read_text())
