"""CS-gate characterization toolkit on a simulated cross-resonance device."""

__version__ = "0.1.0"
