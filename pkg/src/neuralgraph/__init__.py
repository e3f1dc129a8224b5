"""Neural networks as permutation-symmetric graphs, and models that learn on them."""

__version__ = "0.1.0"
