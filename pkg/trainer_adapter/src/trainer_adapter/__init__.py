"""External trainer subprocess for the dataset-synthesis engine.

Implements the JSON-lines trainer wire protocol (hello / train / predict /
shutdown) around a small transformer classifier: a fully offline tiny
model by default, or any sequence-classification checkpoint via the
``pretrained`` extra.
"""

from .config import AdapterConfig
from .serve import PROTOCOL_VERSION, Server, serve

__version__ = "0.1.0"
__all__ = ["AdapterConfig", "Server", "serve", "PROTOCOL_VERSION", "__version__"]
