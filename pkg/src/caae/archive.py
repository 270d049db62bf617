"""Windowed dataset archive: the prepare command's output format.

A directory of .npy arrays plus a JSON manifest carrying labels, split
index lists, drop counts and a digest over the array bytes. Plain .npy
files keep the archive byte-reproducible (no zip timestamps).
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .dataio import SensorWindow, Split
from .errors import DataError

ARCHIVE_FORMAT_VERSION = 1
_ARRAYS = ("windows", "users", "activities", "offsets")


def write_archive(
    out_dir,
    windows: list[SensorWindow],
    sample_rate_hz: float,
    window_seconds: float,
    split: Split | None = None,
    dropped_rows: int = 0,
    config_echo: dict | None = None,
) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    arrays = {
        "windows": np.stack([w.values for w in windows]),
        "users": np.array([w.user_id for w in windows], dtype=np.int64),
        "activities": np.array([w.activity_id for w in windows], dtype=np.int64),
        "offsets": np.array([w.source_offset for w in windows], dtype=np.int64),
    }
    digest = hashlib.sha256()
    for name in _ARRAYS:
        path = out / f"{name}.npy"
        np.save(path, arrays[name])
        digest.update(path.read_bytes())
    manifest = {
        "format_version": ARCHIVE_FORMAT_VERSION,
        "n_windows": len(windows),
        "channels": int(arrays["windows"].shape[1]),
        "window_length": int(arrays["windows"].shape[2]),
        "sample_rate_hz": sample_rate_hz,
        "window_seconds": window_seconds,
        "dropped_rows": dropped_rows,
        "data_digest": digest.hexdigest(),
        "config": config_echo or {},
    }
    if split is not None:
        index = {id(w): i for i, w in enumerate(windows)}
        manifest["split"] = {
            part: [index[id(w)] for w in getattr(split, part)]
            for part in ("train", "validation", "test")
        }
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")
    return manifest


def read_archive(path):
    """Returns (windows, manifest)."""
    root = Path(path)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise DataError(f"not an archive directory (no manifest.json): {root}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format_version") != ARCHIVE_FORMAT_VERSION:
        raise DataError(f"unsupported archive version {manifest.get('format_version')}")
    arrays = {}
    digest = hashlib.sha256()
    for name in _ARRAYS:
        file = root / f"{name}.npy"
        if not file.exists():
            raise DataError(f"archive missing {name}.npy: {root}")
        digest.update(file.read_bytes())
        arrays[name] = np.load(file)
    if digest.hexdigest() != manifest["data_digest"]:
        raise DataError(f"archive digest mismatch in {root}")
    windows = [
        SensorWindow(
            values=arrays["windows"][i],
            user_id=int(arrays["users"][i]),
            activity_id=int(arrays["activities"][i]),
            source_offset=int(arrays["offsets"][i]),
        )
        for i in range(manifest["n_windows"])
    ]
    return windows, manifest
