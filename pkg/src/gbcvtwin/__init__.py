"""Numerical geometry of Killing submersions over conformally flat
bases: ambient space models, prescribed-mean-curvature graphs, the
twin correspondence with spacelike graphs, reference surfaces, and
Cheeger/flux bounds."""

__version__ = "0.1.0"
