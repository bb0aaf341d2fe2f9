"""Run manifests: every CLI invocation records its exact inputs."""

from __future__ import annotations

import json
import platform
import sys
import time
from pathlib import Path

from . import __version__


def write_manifest(out_dir, subcommand: str, flags: dict, seed: int | None = None) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "subcommand": subcommand,
        "argv": sys.argv,
        "flags": {k: (str(v) if isinstance(v, Path) else v) for k, v in flags.items()},
        "seed": seed,
        "version": __version__,
        "python": platform.python_version(),
        "started_at": time.time(),
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, default=str) + "\n")
    return path
