"""Cross curvature flow of 3-metrics: curvature, flow integration and identity checks."""

__version__ = "0.1.0"
