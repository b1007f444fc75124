"""
Domain types
"""

from birdie.models.census import CensusTables
from birdie.models.estimates import ConditionalEstimate, DisparityEstimate, EvalReport
from birdie.models.manifest import RunManifest
from birdie.models.outcome import OutcomeFit, OutcomeModelSpec
from birdie.models.probs import ProbMatrix
from birdie.models.records import CellIndex, RecordTable, make_records

__all__ = [
    'CensusTables',
    'CellIndex',
    'ConditionalEstimate',
    'DisparityEstimate',
    'EvalReport',
    'OutcomeFit',
    'OutcomeModelSpec',
    'ProbMatrix',
    'RecordTable',
    'RunManifest',
    'make_records',
]
