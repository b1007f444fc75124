"""
CSV reading and writing shared by every module
"""

import logging
from pathlib import Path

import numpy as np
import pandas as pd

from birdie.middleware.validators import validate_columns

logger = logging.getLogger(__name__)

# 17 significant digits parse back to the same double
FLOAT_FORMAT = '%.17g'


def read_table(path, required=(), text_columns=(), numeric_columns=()):
    """
    Read a CSV with label columns kept as text

    Args:
        path: File path
        required: Columns that must be present
        text_columns: Columns read as strings (empty cells become None)
        numeric_columns: Columns coerced to float (empty cells become NaN)

    Returns:
        DataFrame
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(2, 'No such file', str(path))
    header = pd.read_csv(path, nrows=0).columns
    dtypes = {column: str for column in text_columns if column in header}
    frame = pd.read_csv(path, dtype=dtypes, keep_default_na=False, float_precision='round_trip')
    validate_columns(frame, required, source=path.name)
    for column in text_columns:
        if column in frame.columns:
            frame[column] = frame[column].where(frame[column] != '', None)
    for column in numeric_columns:
        if column in frame.columns and frame[column].dtype == object:
            frame[column] = pd.to_numeric(frame[column].replace('', np.nan), errors='coerce')
    return frame


def write_table(frame, path):
    """Write a DataFrame with round-trip float formatting"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator='\n')
    logger.info(f'Wrote {len(frame)} rows to {path}')
    return path
