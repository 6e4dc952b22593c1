"""vis3d: persistent 3D semantic object maps from poses, points and 2D detections."""

__version__ = "0.1.0"
