"""
Per-invocation run state shared by CLI commands
"""

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

from birdie.config.settings import RunConfig, config_text
from birdie.models.manifest import RunManifest
from birdie.utils.helpers import config_hash, derive_seed, generate_run_id, now_iso, tool_version

logger = logging.getLogger(__name__)


@dataclass
class RunContext:
    """
    Attributes:
        config: Validated run config (file values plus global flags)
        config_path: --config file, if any
        command: Subcommand name
        inputs: Input name -> path
        outputs: Written paths
        notes: Free-form manifest notes
    """
    config: RunConfig
    config_path: Optional[str] = None
    command: str = ''
    inputs: Dict[str, str] = field(default_factory=dict)
    outputs: List[str] = field(default_factory=list)
    notes: Dict[str, str] = field(default_factory=dict)
    started_at: str = field(default_factory=now_iso)
    started: float = field(default_factory=time.perf_counter)

    def begin(self, command, **inputs):
        """Reset per-command state and record input paths"""
        self.command = command
        self.inputs = {key: str(value) for key, value in inputs.items() if value is not None}
        if self.config_path:
            self.inputs['config'] = str(self.config_path)
        self.outputs = []
        self.notes = {}
        self.started_at = now_iso()
        self.started = time.perf_counter()
        logger.info(f'Starting {command} (seed {self.config.seed}, {self.config.threads} threads)')
        return self

    def seed_for(self, name):
        """Subsystem seed derived from the root seed"""
        return derive_seed(self.config.seed, f'{self.command}.{name}')

    def record(self, *paths):
        self.outputs.extend(str(path) for path in paths)

    def finish(self, out_dir, **options):
        """
        Write the manifest for this run

        Args:
            out_dir: Output directory
            options: Command options folded into the config hash

        Returns:
            Manifest path
        """
        text = config_text(self.config) + ''.join(f'{k}={v}\n' for k, v in sorted(options.items()))
        manifest = RunManifest(
            run_id=generate_run_id(),
            command=self.command,
            inputs=self.inputs,
            config_hash=config_hash(text),
            seed=self.config.seed,
            version=tool_version(),
            started_at=self.started_at,
            wall_time=round(time.perf_counter() - self.started, 3),
            outputs=sorted(Path(p).name for p in self.outputs),
            notes=self.notes,
        )
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        return manifest.write(out_dir)
