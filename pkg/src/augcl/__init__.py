"""Affinity-uncertainty hard negative mining for graph contrastive learning."""

__version__ = "0.1.0"
