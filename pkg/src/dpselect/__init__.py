"""Private selection mechanisms built around smooth-sensitivity noisy max."""
__version__ = "0.1.0"
