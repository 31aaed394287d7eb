"""Exercise descriptions for federated cyber ranges: validation, brokering, compilation, simulation and scoring."""

__version__ = "0.1.0"
