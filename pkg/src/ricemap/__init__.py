"""Rice extent mapping from multi-season imagery with from-scratch numpy networks."""

__version__ = "0.1.0"
