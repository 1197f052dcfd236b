"""ratmix: finite-horizon numerics for renewal sequences, countable-state Markov shifts and rational weak mixing."""

__version__ = "0.1.0"
