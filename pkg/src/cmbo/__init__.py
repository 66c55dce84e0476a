"""Diffusion-threshold approximation of horizontal mean curvature flow of
graphs over Carnot groups, with the heat-semigroup machinery, a direct
curvature-flow oracle, the resolvent semigroup, and the asymptotic
consistency diagnostics that tie them together."""

from .groups import CarnotGroup, euclidean, from_kind, heisenberg1
from .grid import Box, GridFunction, interior_mask, load_field, save_field

__all__ = [
    "CarnotGroup",
    "euclidean",
    "heisenberg1",
    "from_kind",
    "Box",
    "GridFunction",
    "interior_mask",
    "save_field",
    "load_field",
]

__version__ = "0.1.0"
