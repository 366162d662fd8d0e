"""Score-based causal representation learning from interventions"""

import logging

from .common import ScoreCrlError
from .graph import Dag
from .lscalei import CrlEstimate
from .scores import ScoreDiffDataset


__all__ = [
    "CrlEstimate",
    "Dag",
    "ScoreCrlError",
    "ScoreDiffDataset",
]

logging.getLogger(__name__).addHandler(logging.NullHandler())
