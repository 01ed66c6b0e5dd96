"""Streaming LDP protocols, fine-grained poisoning attacks against them, and a defense."""
from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
