"""Channel estimation workbench for flexible intelligent metasurfaces."""

__version__ = "0.1.0"
