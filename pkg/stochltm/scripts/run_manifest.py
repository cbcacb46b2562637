"""
Run manifest written next to every set of CLI outputs.

Records how the outputs were produced so a run can be repeated: subcommand,
scenario, output directory, seed, replications, model and weight override.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, Optional

MANIFEST_NAME = "run_manifest.json"


def _utc_now_iso() -> str:
    return datetime.now(timezone.utc).replace(microsecond=0).isoformat().replace("+00:00", "Z")


@dataclass
class RunManifest:
    subcommand: str
    config_path: str
    output_dir: str
    seed: Optional[int] = None
    replications: Optional[int] = None
    model: Optional[str] = None
    weight: Optional[float] = None
    outputs: Dict[str, str] = field(default_factory=dict)
    created_at: Optional[str] = None


def save_manifest(manifest: RunManifest) -> Path:
    out_dir = Path(manifest.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if manifest.created_at is None:
        manifest.created_at = _utc_now_iso()
    path = out_dir / MANIFEST_NAME
    payload = {"version": 1, **asdict(manifest)}
    path.write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")
    return path


def load_manifest(output_dir: Path) -> Optional[RunManifest]:
    path = Path(output_dir) / MANIFEST_NAME
    if not path.exists():
        return None
    raw = json.loads(path.read_text(encoding="utf-8"))
    raw.pop("version", None)
    known = set(RunManifest.__dataclass_fields__)
    return RunManifest(**{k: v for k, v in raw.items() if k in known})
