"""Additive separability tests for neural-network surrogates.

Eight ways to compute a surrogate's mixed partial derivative, and the
machinery to compare them as separability classifiers on a labelled corpus.
"""

from .errors import AddsepError

__version__ = "0.1.0"

__all__ = ["AddsepError", "__version__"]
