"""Market clearing and pricing for unit commitment via semidefinite relaxations."""

__version__ = "0.1.0"
