"""SHA-256 helpers for dataset provenance and checkpoint integrity."""

import json
from typing import Any, Dict

from cryptography.hazmat.primitives import hashes


def sha256(data: bytes) -> bytes:
    digest = hashes.Hash(hashes.SHA256())
    digest.update(data)
    return digest.finalize()


def config_hash(config: Dict[str, Any]) -> str:
    """Hex digest of a canonical JSON rendering of a config mapping."""
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return sha256(canonical.encode("utf-8")).hex()
