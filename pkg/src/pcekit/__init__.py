"""Perception-guided crossmodal entailment toolkit."""

__version__ = "0.1.0"
