"""Feature-bundle exporter: backbones in, STF1 tensors + manifest out."""

from .export import export_bundle
from .prompts import PromptSpec, build_text_embeddings
from .stf1 import read_tensor, write_tensor

__version__ = "0.1.0"
