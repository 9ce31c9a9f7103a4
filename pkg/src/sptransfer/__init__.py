"""Exemplar-based photo style transfer over superpixels.

Pixels of both images are grouped into superpixels (seeds grown from matched
points, then a spectral co-clustering of a pixel bipartite graph), superpixels
are paired by a one-to-one assignment, and each input superpixel takes on the
l-alpha-beta statistics of its partner before an edge-preserving smoothing.
"""

from .correspondence import MatchedPointSet, load_matches
from .features import FeatureWeights
from .pipeline import PipelineConfig, RunReport, RunResult, StageError, run

__all__ = [
    "FeatureWeights",
    "MatchedPointSet",
    "PipelineConfig",
    "RunReport",
    "RunResult",
    "StageError",
    "load_matches",
    "run",
]
__version__ = "0.1.0"
