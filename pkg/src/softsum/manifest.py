"""Run manifests: resolved configuration plus input/output hashes.

Every CLI subcommand writes one of these next to its primary output (or
to --manifest-out). A manifest pins the seed and the full resolved
configuration, so re-running the same subcommand with the same inputs
reproduces the recorded artifact hashes bit for bit. Wall-clock data is
deliberately excluded.
"""

from __future__ import annotations

import hashlib
import json


def sha256_file(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(path, command, config, inputs, outputs):
    """Record a run. ``inputs``/``outputs`` are path lists; hashed here."""
    record = {
        "command": command,
        "config": config,
        "inputs": {str(p): sha256_file(p) for p in inputs},
        "outputs": {str(p): sha256_file(p) for p in outputs},
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(record, indent=2, sort_keys=True) + "\n")
    return record


def read_manifest(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
