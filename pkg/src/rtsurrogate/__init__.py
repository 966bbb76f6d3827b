"""Machine-learning surrogates for the chemistry step of a reactive transport column."""

__version__ = "0.1.0"
