"""Dataset synthesis by error extrapolation, with an offline gap simulator.

The pipeline synthesizes a seed training set for a small model by querying
a large language model, then iteratively shrinks the gap to the real data
distribution: train the small model, collect its errors on a gold
validation split, ask the backend for lookalike examples, fold them back
in.  ``gapsim`` carries the matching discrete-distribution theory;
``demo`` bundles a deterministic offline scenario exercising everything.
"""

from . import core, demo, diversity, ees, gapsim, llm, metrics, prompting, synthesis, trainer
from .core import Dataset, Example, Provenance, TaskSpec, load_dataset, load_task_spec, merge, save_dataset
from .errors import BackendError, ConfigError, DataFormatError, InvariantError, S3Error

__version__ = "0.1.0"

__all__ = [
    "core", "demo", "diversity", "ees", "gapsim", "llm", "metrics", "prompting",
    "synthesis", "trainer",
    "Dataset", "Example", "Provenance", "TaskSpec",
    "load_dataset", "load_task_spec", "merge", "save_dataset",
    "S3Error", "ConfigError", "DataFormatError", "BackendError", "InvariantError",
    "__version__",
]
