"""Deterministic npz-style checkpoint container.

A checkpoint is a plain zip of ``.npy`` members (readable with
``np.load``) written with sorted member names, no compression, and a
fixed 1980-01-01 timestamp, so identical content means identical bytes.
One member, ``_manifest.npy``, holds a canonical-JSON description
(uint8 bytes): format tag, version, kind, structural metadata, and the
logical name of every array member.
"""

from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path

import numpy as np

from .errors import FrameFormatError, MissingArtifactError

FORMAT_TAG = "splitsem-checkpoint"
FORMAT_VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)


def save_container(path: str | Path, kind: str, arrays: dict, manifest: dict) -> None:
    meta = {
        "format": FORMAT_TAG,
        "version": FORMAT_VERSION,
        "kind": kind,
        "arrays": sorted(arrays),
        **manifest,
    }
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()
    members = dict(arrays)
    members["_manifest"] = np.frombuffer(blob, dtype=np.uint8)
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        for name in sorted(members):
            buf = io.BytesIO()
            np.lib.format.write_array(
                buf, np.ascontiguousarray(members[name]), allow_pickle=False
            )
            info = zipfile.ZipInfo(name + ".npy", date_time=_EPOCH)
            zf.writestr(info, buf.getvalue())


def load_container(path: str | Path, expect_kind: str | None = None):
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"no such checkpoint: {path}")
    data = np.load(path)
    if "_manifest" not in data:
        raise FrameFormatError(f"{path} is not a splitsem checkpoint (no manifest)")
    manifest = json.loads(bytes(data["_manifest"]).decode())
    if manifest.get("format") != FORMAT_TAG:
        raise FrameFormatError(f"{path}: unknown container format")
    if manifest.get("version") != FORMAT_VERSION:
        raise FrameFormatError(f"{path}: unsupported container version")
    if expect_kind is not None and manifest.get("kind") != expect_kind:
        raise MissingArtifactError(
            f"{path}: expected a {expect_kind!r} checkpoint, found "
            f"{manifest.get('kind')!r}"
        )
    arrays = {name: data[name] for name in manifest["arrays"]}
    return arrays, manifest
