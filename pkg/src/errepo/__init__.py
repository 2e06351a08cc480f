"""Model repository for multi-source entity resolution.

ER problems (one per source pair) are compared by the distributions of
their similarity features, clustered, and served by one classifier per
cluster trained with a shared labeling budget.
"""

__version__ = "0.1.0"

from .core import ERProblem, FeatureVector, GroundTruth, RecordRef, load_dataset
from .errors import ERError

__all__ = ["ERError", "ERProblem", "FeatureVector", "GroundTruth", "RecordRef", "__version__",
           "load_dataset"]
