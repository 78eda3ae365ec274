"""High-order mesh optimization with weak level-set surface fitting."""

__version__ = "0.1.0"
