"""
Run manifest: resolved config, seeds, timings and a digest of every output file.
"""

import hashlib
import json
import logging
import platform
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from psm_ranker import __version__

MANIFEST_NAME = "manifest.json"


def file_digest(path: Union[str, Path]) -> str:
    sha = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            sha.update(chunk)
    return sha.hexdigest()


@dataclass
class RunManifest:
    command: str
    config: Dict[str, Any]
    seeds: Dict[str, int] = field(default_factory=dict)
    version: str = __version__
    python: str = field(default_factory=platform.python_version)
    timings: Dict[str, float] = field(default_factory=dict)
    kkt_violation: Optional[float] = None
    converged: Optional[bool] = None
    outputs: Dict[str, str] = field(default_factory=dict)
    # Outputs whose content depends on wall-clock time.
    nondeterministic: List[str] = field(default_factory=list)
    notes: Dict[str, Any] = field(default_factory=dict)

    def add_output(self, path: Union[str, Path], deterministic: bool = True) -> None:
        path = Path(path)
        self.outputs[path.name] = file_digest(path)
        if not deterministic and path.name not in self.nondeterministic:
            self.nondeterministic.append(path.name)

    def write(self, out_dir: Union[str, Path]) -> Path:
        path = Path(out_dir) / MANIFEST_NAME
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(asdict(self), f, indent=2, ensure_ascii=False, sort_keys=True)
            f.write("\n")
        logging.info(f"Manifest with {len(self.outputs)} output digests written to {path}")
        return path


def load_manifest(path: Union[str, Path]) -> Dict[str, Any]:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)
