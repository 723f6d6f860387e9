from .hashing import sha256_bytes, sha256_file
from .manifest import MANIFEST_NAME, RunManifest

__all__ = ["MANIFEST_NAME", "RunManifest", "sha256_bytes", "sha256_file"]
