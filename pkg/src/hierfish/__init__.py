"""Hierarchical coarse/fine species classification with video-based
inference and selective coarse-level fallback."""

from .taxonomy import Taxonomy, default_taxonomy, load_taxonomy

__all__ = ["Taxonomy", "default_taxonomy", "load_taxonomy"]
__version__ = "0.1.0"
