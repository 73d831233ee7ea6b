"""Sketch-to-3D modeling engine: view-aware mesh generation from binary sketches,
differentiable silhouette rendering, TSDF scene fusion and in-scene placement."""

__version__ = "0.1.0"
