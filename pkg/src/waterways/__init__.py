"""Raster-to-vector waterway mapping toolkit.

Stages: cloud-free compositing of satellite tiles, 10-channel feature
stacks, typed label rasterization with loss weights, elevation-guided
topology-preserving thinning, vectorization into waterway graphs, stream
order assignment, and distance-based evaluation against reference maps.
"""

__version__ = "0.1.0"

from .grid import GeoGrid, GeoTransform, merge_tiles, neighbors

__all__ = ["GeoGrid", "GeoTransform", "merge_tiles", "neighbors", "__version__"]
