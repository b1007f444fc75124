"""
Helper functions for runs and seeds
"""

import hashlib
import uuid
import zlib
from datetime import datetime, timezone
from importlib import metadata

import numpy as np

PACKAGE_NAME = 'birdie-disparity'


def generate_run_id():
    """Generate unique run ID"""
    return f"RUN-{int(datetime.now().timestamp())}-{str(uuid.uuid4())[:8]}".upper()


def now_iso():
    return datetime.now(timezone.utc).isoformat(timespec='seconds')


def tool_version():
    try:
        return metadata.version(PACKAGE_NAME)
    except metadata.PackageNotFoundError:
        from birdie import __version__
        return __version__


def config_hash(text):
    """SHA-256 of the canonical config text"""
    return hashlib.sha256(text.encode('utf-8')).hexdigest()


def derive_seed(root, name):
    """
    Subsystem seed derived from the root seed

    The child sequence is SeedSequence([root, crc32(name)]) so a subsystem's
    stream depends only on the root seed and its own name.

    Args:
        root: Root seed from --seed
        name: Subsystem name, e.g. 'synth' or 'bias_bound'

    Returns:
        numpy SeedSequence
    """
    return np.random.SeedSequence([int(root), zlib.crc32(name.encode('utf-8'))])


def spawn_seeds(seed, n):
    """n independent child SeedSequences; seed may be an int or a SeedSequence"""
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    return seed.spawn(n)


def chunk_bounds(n, block_size):
    """Half-open [start, stop) ranges covering 0..n in blocks"""
    block_size = max(int(block_size), 1)
    return [(start, min(start + block_size, n)) for start in range(0, n, block_size)]
