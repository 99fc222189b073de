"""Parameter checkpoints: a JSON manifest next to a flat little-endian float64 blob."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

_DTYPE = np.dtype("<f8")


def save_checkpoint(state: dict[str, np.ndarray], stem: str | Path, meta: dict | None = None) -> tuple[Path, Path]:
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    entries, offset = [], 0
    for name, arr in state.items():
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += int(arr.size)
    manifest = {"format": "pcekit-params/1", "dtype": "<f8", "count": offset, "params": entries, "meta": meta or {}}
    bin_path, json_path = stem.with_suffix(".bin"), stem.with_suffix(".json")
    blob = np.concatenate([np.asarray(a, dtype=_DTYPE).ravel() for a in state.values()]) if state else np.zeros(0, _DTYPE)
    bin_path.write_bytes(blob.astype(_DTYPE).tobytes())
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return json_path, bin_path


def load_checkpoint(stem: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    stem = Path(stem)
    if stem.suffix in (".json", ".bin"):
        stem = stem.with_suffix("")
    with open(stem.with_suffix(".json"), encoding="utf-8") as fh:
        manifest = json.load(fh)
    blob = np.frombuffer(stem.with_suffix(".bin").read_bytes(), dtype=_DTYPE)
    if blob.size != manifest["count"]:
        raise ValueError(f"{stem}.bin holds {blob.size} values, manifest expects {manifest['count']}")
    state = {}
    for e in manifest["params"]:
        n = int(np.prod(e["shape"])) if e["shape"] else 1
        state[e["name"]] = blob[e["offset"]:e["offset"] + n].reshape(e["shape"]).astype(np.float64)
    return state, manifest
