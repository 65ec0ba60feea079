"""Reduced-order models for hybrid-type parabolic problems: POD, the Deep Orthogonal
Decomposition, and three neural surrogates built on them."""

__version__ = "0.1.0"
