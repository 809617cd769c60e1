"""Block-sparse attention with representative-token mask prediction, window permutation and first-frame sink."""

__version__ = "0.1.0"
