"""Visual hide-and-seek: a 2D partially observable pursuit-evasion laboratory."""

from .env import Action, VariantConfig, get_variant, PRESETS  # noqa: F401

__version__ = "0.1.0"
