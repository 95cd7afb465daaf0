"""Parameter identification for the abrasive waterjet milling trench model."""

__version__ = "0.1.0"
