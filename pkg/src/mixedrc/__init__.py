"""Mixed-resolution video coding with reference-based restoration."""
__version__ = "0.1.0"
