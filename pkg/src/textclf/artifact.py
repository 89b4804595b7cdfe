"""Versioned model file: a plain-text header followed by length-prefixed binary sections.

Layout::

    TEXTCLF-MODEL
    format_version=1
    family=<family>
    <key>=<json value>        (metadata, sorted by key)
    sections=<n>
    <empty line>
    n times: u32 name length | name (UTF-8) | u64 payload length | payload

Sections are written in sorted name order, so saving a loaded artifact
reproduces the original bytes.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .errors import ArtifactCorrupt, MissingFile, VersionMismatch

MAGIC = "TEXTCLF-MODEL"
FORMAT_VERSION = 1


@dataclass
class ModelArtifact:
    family: str
    metadata: dict[str, Any] = field(default_factory=dict)
    sections: dict[str, bytes] = field(default_factory=dict)


def json_bytes(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":")).encode("utf-8")


def read_json(payload: bytes):
    return json.loads(payload.decode("utf-8"))


def array_bytes(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.save(buf, np.ascontiguousarray(arr), allow_pickle=False)
    return buf.getvalue()


def read_array(payload: bytes) -> np.ndarray:
    return np.load(io.BytesIO(payload), allow_pickle=False)


def dumps(artifact: ModelArtifact) -> bytes:
    lines = [MAGIC, f"format_version={FORMAT_VERSION}", f"family={artifact.family}"]
    for key in sorted(artifact.metadata):
        if "=" in key or "\n" in key or key in ("format_version", "family", "sections"):
            raise ValueError(f"invalid metadata key {key!r}")
        lines.append(f"{key}={json_bytes(artifact.metadata[key]).decode('utf-8')}")
    lines.append(f"sections={len(artifact.sections)}")
    out = io.BytesIO()
    out.write(("\n".join(lines) + "\n\n").encode("utf-8"))
    for name in sorted(artifact.sections):
        raw_name = name.encode("utf-8")
        payload = artifact.sections[name]
        out.write(struct.pack("<I", len(raw_name)))
        out.write(raw_name)
        out.write(struct.pack("<Q", len(payload)))
        out.write(payload)
    return out.getvalue()


def loads(data: bytes) -> ModelArtifact:
    end = data.find(b"\n\n")
    if end < 0:
        raise ArtifactCorrupt("missing header terminator")
    try:
        lines = data[:end].decode("utf-8").split("\n")
    except UnicodeDecodeError:
        raise ArtifactCorrupt("header is not UTF-8") from None
    if lines[0] != MAGIC:
        raise ArtifactCorrupt("not a textclf model file")
    if len(lines) < 2 or not lines[1].startswith("format_version="):
        raise VersionMismatch("missing format version")
    version = lines[1].partition("=")[2]
    if version != str(FORMAT_VERSION):
        raise VersionMismatch(f"format version {version!r}, expected {FORMAT_VERSION}")

    header = {}
    for line in lines[2:]:
        key, sep, value = line.partition("=")
        if not sep:
            raise ArtifactCorrupt(f"bad header line {line!r}")
        header[key] = value
    try:
        family = header.pop("family")
        n_sections = int(header.pop("sections"))
        metadata = {k: json.loads(v) for k, v in header.items()}
    except (KeyError, ValueError) as exc:
        raise ArtifactCorrupt(f"bad header: {exc}") from None

    sections: dict[str, bytes] = {}
    pos = end + 2
    try:
        for _ in range(n_sections):
            (name_len,) = struct.unpack_from("<I", data, pos)
            pos += 4
            name = data[pos:pos + name_len].decode("utf-8")
            pos += name_len
            (size,) = struct.unpack_from("<Q", data, pos)
            pos += 8
            if pos + size > len(data):
                raise ArtifactCorrupt(f"section {name!r} is truncated")
            sections[name] = data[pos:pos + size]
            pos += size
    except struct.error:
        raise ArtifactCorrupt("truncated section table") from None
    if pos != len(data):
        raise ArtifactCorrupt("trailing bytes after the last section")
    return ModelArtifact(family, metadata, sections)


def save(artifact: ModelArtifact, path: str | Path) -> bytes:
    data = dumps(artifact)
    Path(path).write_bytes(data)
    return data


def load(path: str | Path) -> ModelArtifact:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    return loads(path.read_bytes())
