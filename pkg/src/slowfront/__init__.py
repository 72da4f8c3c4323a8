"""Numerical laboratory for slow front motion in multi-well gradient flows."""
from __future__ import annotations

__version__ = "0.1.0"
