"""Traffic video analytics in bird's-eye view.

Converts per-frame vehicle detections into BEV trajectories through a planar
homography, tracks and stitches them, auto-calibrates pixel-to-world scale,
and extracts counts, speeds, and accelerations per lane, direction, and
vehicle class.
"""

__version__ = "0.1.0"
