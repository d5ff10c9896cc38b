"""Two-party private lift measurement: identity matching, sharded garbled
circuits and differentially private confidence intervals."""

__version__ = "0.1.0"
