"""

Graph datasets of ``wtawp``.

``core``
    The ``core`` module provides the graph object, adjacency normalization,
    connected components and train/val/test splits.

``toys``
    The ``toys`` module provides the seeded synthetic 2-D datasets.

"""
from wtawp.datasets.core import *
from wtawp.datasets.toys import *
