"""Sparse variational graph autoencoders with stick-breaking priors."""

__version__ = "0.1.0"
