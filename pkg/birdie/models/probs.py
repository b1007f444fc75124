"""
Race probability matrix
"""

from dataclasses import dataclass, field, replace
from typing import Any, Dict, Tuple

import numpy as np
import pandas as pd


@dataclass(frozen=True)
class ProbMatrix:
    """
    N x |R| matrix of race probabilities

    Attributes:
        probs: Row i is Pr(R_i = . | conditioning set)
        races: Race labels in column order
        ids: Record identifiers aligned with rows
        conditioning: What the rows condition on, e.g. ('G', 'X', 'S', 'Y')
        diagnostics: Fallback and degenerate-row tallies
    """
    probs: np.ndarray
    races: Tuple[str, ...]
    ids: np.ndarray
    conditioning: Tuple[str, ...] = ('G', 'X', 'S')
    diagnostics: Dict[str, Any] = field(default_factory=dict)

    @property
    def n(self):
        return self.probs.shape[0]

    def with_probs(self, probs, conditioning=None, diagnostics=None):
        return replace(
            self,
            probs=probs,
            conditioning=tuple(conditioning or self.conditioning),
            diagnostics=dict(diagnostics or {}),
        )

    def take(self, index):
        return replace(self, probs=self.probs[index], ids=self.ids[index])

    def to_frame(self):
        frame = pd.DataFrame(self.probs, columns=list(self.races))
        frame.insert(0, 'id', self.ids)
        return frame
