"""Mean curvature of boundaries in Fermi coordinates, its critical points, and
metric perturbations that make them nondegenerate."""

__version__ = "0.1.0"
