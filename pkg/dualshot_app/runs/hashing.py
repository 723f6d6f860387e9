from __future__ import annotations

from pathlib import Path

from cryptography.hazmat.primitives import hashes

CHUNK = 1 << 20


def sha256_bytes(data: bytes) -> str:
    digest = hashes.Hash(hashes.SHA256())
    digest.update(data)
    return digest.finalize().hex()


def sha256_file(path) -> str:
    digest = hashes.Hash(hashes.SHA256())
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(CHUNK), b""):
            digest.update(chunk)
    return digest.finalize().hex()
