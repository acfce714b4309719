"""Weight files: a JSON manifest plus a little-endian float32 blob, and tensor text dumps."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import IntegrityError, ShapeError
from .params import named_tensors, replace_tensors
from .tensor import Tensor, as_tensor

_LE_F32 = np.dtype("<f4")


@dataclass(frozen=True)
class ManifestEntry:
    name: str
    shape: tuple
    offset: int

    @property
    def nbytes(self):
        return int(np.prod(self.shape, dtype=np.int64)) * 4


@dataclass(frozen=True)
class WeightManifest:
    entries: tuple
    blob: str

    def to_json(self):
        doc = {"entries": [{"name": e.name, "shape": list(e.shape), "offset": e.offset}
                           for e in self.entries], "blob": self.blob}
        return json.dumps(doc, indent=1) + "\n"

    @classmethod
    def from_json(cls, text):
        try:
            doc = json.loads(text)
            entries = tuple(ManifestEntry(str(e["name"]), tuple(int(d) for d in e["shape"]),
                                          int(e["offset"])) for e in doc["entries"])
            blob = str(doc["blob"])
        except (ValueError, KeyError, TypeError) as exc:
            raise IntegrityError(f"malformed manifest: {exc}") from None
        return cls(entries, blob)

    @property
    def total_bytes(self):
        return sum(e.nbytes for e in self.entries)

    def validate(self, blob_len=None):
        pos, seen = 0, set()
        for e in self.entries:
            if e.name in seen:
                raise IntegrityError(f"duplicate entry {e.name!r}")
            seen.add(e.name)
            if e.offset != pos:
                raise IntegrityError(f"{e.name}: offset {e.offset}, expected contiguous {pos}")
            pos += e.nbytes
        if blob_len is not None and blob_len != pos:
            raise IntegrityError(f"blob holds {blob_len} bytes, manifest describes {pos}")


def pack(tree, blob_name="weights.bin"):
    """``(manifest, blob bytes)`` for every tensor leaf, in tree order."""
    entries, chunks, pos = [], [], 0
    for name, t in named_tensors(tree).items():
        raw = np.ascontiguousarray(t.data, dtype=_LE_F32).tobytes()
        entries.append(ManifestEntry(name, tuple(t.shape), pos))
        chunks.append(raw)
        pos += len(raw)
    return WeightManifest(tuple(entries), blob_name), b"".join(chunks)


def unpack(manifest, blob, template, dtype=None):
    """Fill ``template``'s leaves from ``blob``; names and shapes must match exactly."""
    manifest.validate(len(blob))
    want = named_tensors(template)
    got = [e.name for e in manifest.entries]
    if got != list(want):
        missing = sorted(set(want) - set(got))
        extra = sorted(set(got) - set(want))
        raise IntegrityError(f"manifest does not match model: missing={missing} extra={extra}")
    values = {}
    for e in manifest.entries:
        if e.shape != want[e.name].shape:
            raise IntegrityError(f"{e.name}: manifest shape {e.shape}, model {want[e.name].shape}")
        arr = np.frombuffer(blob, dtype=_LE_F32, count=e.nbytes // 4, offset=e.offset)
        values[e.name] = arr.reshape(e.shape).astype(dtype or want[e.name].dtype)
    return replace_tensors(template, values)


def save_weights(tree, path):
    """Write ``path`` (manifest JSON) and its blob next to it; returns the manifest."""
    path = Path(path)
    blob_name = path.with_suffix(".bin").name
    manifest, blob = pack(tree, blob_name)
    path.parent.mkdir(parents=True, exist_ok=True)
    (path.parent / blob_name).write_bytes(blob)
    path.write_text(manifest.to_json())
    return manifest


def load_weights(path, template, dtype=None):
    path = Path(path)
    try:
        manifest = WeightManifest.from_json(path.read_text())
        blob = (path.parent / manifest.blob).read_bytes()
    except OSError as exc:
        raise IntegrityError(f"cannot read weights: {exc}") from None
    return unpack(manifest, blob, template, dtype)


# ---------------------------------------------------------------- tensor dumps

def dump_tensor(t):
    """``shape: d0 d1 ...`` then row-major values, shortest round-trip digits for the dtype."""
    t = as_tensor(t)
    fmt = "%.17g" if t.dtype == np.float64 else "%.9g"
    flat = t.data.reshape(-1)
    lines = ["shape: " + " ".join(str(d) for d in t.shape)]
    for i in range(0, flat.size, 8):
        lines.append(" ".join(fmt % v for v in flat[i:i + 8]))
    return "\n".join(lines) + "\n"


def parse_dump(text, dtype=np.float64):
    lines = text.strip().splitlines()
    if not lines or not lines[0].startswith("shape:"):
        raise ShapeError("tensor dump must start with a 'shape:' header")
    shape = tuple(int(d) for d in lines[0][len("shape:"):].split())
    values = np.array(" ".join(lines[1:]).split(), dtype=dtype)
    if values.size != int(np.prod(shape, dtype=np.int64)):
        raise ShapeError(f"dump header {shape} vs {values.size} values")
    return Tensor(values.reshape(shape))
