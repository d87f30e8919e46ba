"""Versioned single-file checkpoints.

Layout::

    MASSKIT-CKPT
    version: 1
    manifest-bytes: <N>
    <N bytes of JSON manifest>
    <payload: little-endian arrays, concatenated in manifest order>

The manifest is plain text: config echo, encoding vocabulary, metadata
scheme, array names/shapes/offsets and the SHA-256 of the payload.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .graphprep import EncodingConfig
from .model import ModelConfig, ModelParams
from .spectra import MetadataScheme

__all__ = [
    "FORMAT_VERSION",
    "Checkpoint",
    "CheckpointError",
    "ChecksumError",
    "VersionError",
    "IncompatibleCheckpointError",
    "save_checkpoint",
    "load_checkpoint",
]

FORMAT_VERSION = 1
_MAGIC = b"MASSKIT-CKPT\n"


class CheckpointError(ValueError):
    pass


class ChecksumError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


class IncompatibleCheckpointError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    params: ModelParams
    model_config: ModelConfig
    metadata_scheme: MetadataScheme = field(default_factory=MetadataScheme)
    extra: dict = field(default_factory=dict)


def _scheme_dict(scheme: MetadataScheme) -> dict:
    d = asdict(scheme)
    d["adducts"] = list(d["adducts"])
    d["collision_types"] = list(d["collision_types"])
    return d


def save_checkpoint(
    path,
    params: ModelParams,
    model_config: ModelConfig,
    metadata_scheme: MetadataScheme | None = None,
    extra: dict | None = None,
) -> None:
    scheme = metadata_scheme or MetadataScheme()
    arrays = []
    chunks = []
    offset = 0
    for name, t in params.items():
        arr = np.ascontiguousarray(t.data)
        dtype = arr.dtype.newbyteorder("<")
        raw = arr.astype(dtype, copy=False).tobytes()
        arrays.append({"name": name, "shape": list(arr.shape), "dtype": dtype.str, "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    manifest = {
        "format_version": FORMAT_VERSION,
        "model_config": model_config.to_dict(),
        "encoding": model_config.encoding.to_dict(),
        "metadata_scheme": _scheme_dict(scheme),
        "extra": extra or {},
        "arrays": arrays,
        "payload_bytes": len(payload),
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    text = json.dumps(manifest, indent=1, sort_keys=True).encode("utf-8") + b"\n"
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(f"version: {FORMAT_VERSION}\n".encode())
        fh.write(f"manifest-bytes: {len(text)}\n".encode())
        fh.write(text)
        fh.write(payload)


def read_manifest(path) -> dict:
    with open(path, "rb") as fh:
        manifest, _ = _read(fh)
    return manifest


def _read(fh) -> tuple[dict, bytes]:
    if fh.readline() != _MAGIC:
        raise CheckpointError("not a masskit checkpoint (bad magic line)")
    line = fh.readline().decode("ascii", "replace").strip()
    if not line.startswith("version:"):
        raise CheckpointError("missing version line")
    version = int(line.split(":", 1)[1])
    if version != FORMAT_VERSION:
        raise VersionError(f"checkpoint format version {version}, expected {FORMAT_VERSION}")
    line = fh.readline().decode("ascii", "replace").strip()
    if not line.startswith("manifest-bytes:"):
        raise CheckpointError("missing manifest length")
    n = int(line.split(":", 1)[1])
    text = fh.read(n)
    if len(text) != n:
        raise ChecksumError("checkpoint truncated inside the manifest")
    try:
        manifest = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ChecksumError(f"manifest is corrupt: {exc}") from None
    payload = fh.read()
    return manifest, payload


def load_checkpoint(path, expected_encoding: EncodingConfig | None = None) -> Checkpoint:
    """Read a checkpoint, verifying version, payload checksum and vocabulary."""
    with open(path, "rb") as fh:
        manifest, payload = _read(fh)
    if manifest.get("format_version") != FORMAT_VERSION:
        raise VersionError(f"manifest format version {manifest.get('format_version')}, expected {FORMAT_VERSION}")
    if len(payload) != manifest["payload_bytes"] or hashlib.sha256(payload).hexdigest() != manifest["payload_sha256"]:
        raise ChecksumError(f"payload checksum mismatch in {path}")
    encoding = EncodingConfig.from_dict(manifest["encoding"])
    if expected_encoding is not None and expected_encoding.to_dict() != encoding.to_dict():
        raise IncompatibleCheckpointError("checkpoint was trained with a different encoding vocabulary")
    cfg_dict = dict(manifest["model_config"])
    cfg_dict["encoding"] = encoding
    config = ModelConfig.from_dict(cfg_dict)
    arrays = {}
    for spec in manifest["arrays"]:
        raw = payload[spec["offset"] : spec["offset"] + spec["nbytes"]]
        arr = np.frombuffer(raw, dtype=np.dtype(spec["dtype"])).reshape(spec["shape"])
        arrays[spec["name"]] = arr.astype(arr.dtype.newbyteorder("="))
    sd = manifest["metadata_scheme"]
    scheme = MetadataScheme(
        adducts=tuple(sd["adducts"]),
        collision_types=tuple(sd["collision_types"]),
        ce_max=sd["ce_max"],
        precursor_mz_max=sd["precursor_mz_max"],
    )
    return Checkpoint(ModelParams.from_arrays(arrays), config, scheme, manifest.get("extra", {}))
