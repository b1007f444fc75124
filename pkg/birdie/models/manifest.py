"""
Run manifest written next to every command's outputs
"""

import json
import logging
from pathlib import Path
from typing import Dict, List, Optional

from pydantic import BaseModel, Field

from birdie.config.constants import FILE_NAMES

logger = logging.getLogger(__name__)


class RunManifest(BaseModel):
    """Provenance of one CLI run"""

    run_id: str
    command: str
    inputs: Dict[str, str] = Field(default_factory=dict)
    config_hash: str
    seed: int
    version: str
    started_at: str
    wall_time: float = 0.0
    outputs: List[str] = Field(default_factory=list)
    notes: Dict[str, str] = Field(default_factory=dict)

    def write(self, out_dir):
        """Write manifest.json into out_dir, replacing any previous one"""
        path = Path(out_dir) / FILE_NAMES['MANIFEST']
        path.write_text(json.dumps(self.model_dump(), indent=2, sort_keys=True) + '\n')
        logger.info(f'✅ Manifest written to {path}')
        return path


def read_manifest(out_dir) -> Optional[RunManifest]:
    path = Path(out_dir) / FILE_NAMES['MANIFEST']
    if not path.exists():
        return None
    return RunManifest.model_validate_json(path.read_text())
