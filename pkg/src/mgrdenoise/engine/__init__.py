"""Numerical core: tensor ops, kernel lanes, seeded RNG."""

from . import _malloc  # allocator tuning; must run before the big buffers fly
from .backend import backend_name, kernels
from . import ops, rng

__all__ = ["backend_name", "kernels", "ops", "rng"]
