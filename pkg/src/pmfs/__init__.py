"""Progressive multi-fidelity surrogates."""
__version__ = "0.1.0"
