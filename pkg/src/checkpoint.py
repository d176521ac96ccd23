"""Checkpoint storage (FTCKPT1) for trained learners.

Layout: magic line, key=value text header (arch, head, hp.* and meta.*
entries with JSON values, blob count, "end"), then named float64
little-endian blobs with shape prefixes, then a SHA-256 digest of
everything before it.
"""

import json
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict

import numpy as np

# Handle imports - try relative first, then absolute
try:
    from .exceptions import CheckpointError, ConfigurationError
    from .hashing import sha256
    from .logger import Logger
    from .model_spec import Arch, Head, ModelSpec
except ImportError:
    from exceptions import CheckpointError, ConfigurationError
    from hashing import sha256
    from logger import Logger
    from model_spec import Arch, Head, ModelSpec

MAGIC = b"FTCKPT1\n"
DIGEST_SIZE = 32


@dataclass
class Checkpoint:
    spec: ModelSpec
    arrays: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)
    meta: Dict[str, Any] = field(default_factory=dict)

    def array(self, name: str) -> np.ndarray:
        if name not in self.arrays:
            raise CheckpointError(f"Checkpoint has no blob named {name!r}")
        return self.arrays[name]


class CheckpointStore:
    """Reads and writes checkpoint files."""

    def __init__(self):
        self.logger = Logger.get_logger(__name__)

    def encode(self, checkpoint: Checkpoint) -> bytes:
        lines = [f"arch={checkpoint.spec.arch.value}", f"head={checkpoint.spec.head.value}"]
        for key in sorted(checkpoint.spec.hyperparams):
            lines.append(f"hp.{key}={json.dumps(checkpoint.spec.hyperparams[key], sort_keys=True)}")
        for key in sorted(checkpoint.meta):
            lines.append(f"meta.{key}={json.dumps(checkpoint.meta[key], sort_keys=True)}")
        lines.append(f"blobs={len(checkpoint.arrays)}")
        lines.append("end")
        parts = [MAGIC, ("\n".join(lines) + "\n").encode("utf-8")]

        for name, values in checkpoint.arrays.items():
            values = np.ascontiguousarray(values, dtype='<f8')
            encoded_name = name.encode("utf-8")
            parts.append(struct.pack('<I', len(encoded_name)))
            parts.append(encoded_name)
            parts.append(struct.pack('<I', values.ndim))
            parts.append(struct.pack(f'<{values.ndim}I', *values.shape))
            parts.append(values.tobytes(order='C'))
        body = b"".join(parts)
        return body + sha256(body)

    def decode(self, blob: bytes, source: str = "<bytes>") -> Checkpoint:
        if not blob.startswith(MAGIC):
            raise CheckpointError(f"Not an FTCKPT1 checkpoint: {source}")
        if len(blob) < len(MAGIC) + DIGEST_SIZE:
            raise CheckpointError(f"Truncated checkpoint: {source}")
        body, digest = blob[:-DIGEST_SIZE], blob[-DIGEST_SIZE:]
        if sha256(body) != digest:
            raise CheckpointError(f"Checkpoint digest mismatch (corrupted file?): {source}")

        end_marker = b"\nend\n"
        header_end = body.find(end_marker)
        if header_end < 0:
            raise CheckpointError(f"Checkpoint header not terminated: {source}")
        header = body[len(MAGIC):header_end].decode("utf-8").split("\n")
        offset = header_end + len(end_marker)

        fields, hyperparams, meta = {}, {}, {}
        try:
            for line in header:
                key, _, value = line.partition("=")
                if key.startswith("hp."):
                    hyperparams[key[3:]] = json.loads(value)
                elif key.startswith("meta."):
                    meta[key[5:]] = json.loads(value)
                else:
                    fields[key] = value
            spec = ModelSpec(Arch(fields["arch"]), Head(fields["head"]), hyperparams)
            count = int(fields["blobs"])
        except (KeyError, ValueError, ConfigurationError) as e:
            raise CheckpointError(f"Malformed checkpoint header in {source}: {e}")

        arrays: "OrderedDict[str, np.ndarray]" = OrderedDict()
        try:
            for _ in range(count):
                (name_len,) = struct.unpack_from('<I', body, offset)
                offset += 4
                name = body[offset:offset + name_len].decode("utf-8")
                offset += name_len
                (ndim,) = struct.unpack_from('<I', body, offset)
                offset += 4
                shape = struct.unpack_from(f'<{ndim}I', body, offset)
                offset += 4 * ndim
                size = int(np.prod(shape)) if ndim else 1
                values = np.frombuffer(body, dtype='<f8', count=size, offset=offset)
                offset += 8 * size
                arrays[name] = values.reshape(shape).astype(np.float64)
        except (struct.error, ValueError) as e:
            raise CheckpointError(f"Malformed checkpoint blobs in {source}: {e}")
        if offset != len(body):
            raise CheckpointError(f"Trailing bytes after checkpoint blobs in {source}")
        return Checkpoint(spec, arrays, meta)

    def save(self, checkpoint: Checkpoint, path) -> None:
        try:
            Path(path).parent.mkdir(parents=True, exist_ok=True)
            with open(path, 'wb') as f:
                f.write(self.encode(checkpoint))
            self.logger.info(f"Checkpoint saved: {path}")
        except OSError as e:
            raise CheckpointError(f"Cannot write checkpoint {path}: {e}")

    def load(self, path) -> Checkpoint:
        try:
            with open(path, 'rb') as f:
                blob = f.read()
        except OSError as e:
            raise CheckpointError(f"Cannot read checkpoint {path}: {e}")
        return self.decode(blob, str(path))
