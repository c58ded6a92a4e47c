"""Contextual vector provider: transformer hidden states pooled per source
token and exported as JSON Lines."""

__version__ = "0.1.0"

from .export import ProviderConfig, export

__all__ = ["ProviderConfig", "export", "__version__"]
