"""Domain-incremental learning engine: adaptive replay coefficients,
fixed-coefficient method presets, exact divergence computation, and
numerical verification of the generalization-bound structure on finite
instances."""

__version__ = "0.1.0"
