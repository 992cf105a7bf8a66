"""Checkpoint files: a zip holding ``meta.json`` and one ``.npy`` per tensor.

Entries carry a fixed timestamp and are written in a fixed order, so equal
parameters and metadata give byte-identical files.
"""

from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path

import numpy as np

from searchtag.errors import ConfigurationError
from searchtag.neural import ModelParams

FORMAT_VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)


def _entry(name: str) -> zipfile.ZipInfo:
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_STORED
    info.external_attr = 0o644 << 16
    return info


def save_checkpoint(path, params: ModelParams, meta: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    emb, hidden, tags = params.dims
    header = {
        "format": "searchtag-checkpoint",
        "version": FORMAT_VERSION,
        "dims": {"embedding": emb, "hidden": hidden, "tags": tags},
        **(meta or {}),
    }
    tmp = path.with_name(path.name + ".tmp")
    with zipfile.ZipFile(tmp, "w") as zf:
        zf.writestr(_entry("meta.json"), json.dumps(header, sort_keys=True, indent=1))
        for name, arr in params.named_arrays():
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arr, dtype="<f8"), allow_pickle=False)
            zf.writestr(_entry(f"{name}.npy"), buf.getvalue())
    tmp.replace(path)
    return path


def load_checkpoint(path) -> tuple[ModelParams, dict]:
    try:
        return _load(path)
    except (zipfile.BadZipFile, KeyError) as exc:
        raise ConfigurationError(f"{path} is not a readable checkpoint: {exc}") from None


def _load(path) -> tuple[ModelParams, dict]:
    with zipfile.ZipFile(path) as zf:
        meta = json.loads(zf.read("meta.json"))
        if meta.get("format") != "searchtag-checkpoint":
            raise ConfigurationError(f"{path} is not a checkpoint")
        if meta.get("version") != FORMAT_VERSION:
            raise ConfigurationError(f"unsupported checkpoint version {meta.get('version')}")
        arrays = {}
        for name in zf.namelist():
            if name.endswith(".npy"):
                arrays[name[:-4]] = np.lib.format.read_array(io.BytesIO(zf.read(name)))
    params = ModelParams.from_named(arrays)
    dims = meta["dims"]
    if params.dims != (dims["embedding"], dims["hidden"], dims["tags"]):
        raise ConfigurationError("checkpoint tensors disagree with recorded dims")
    return params, meta
