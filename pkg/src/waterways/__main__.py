"""Module entry point: ``python -m waterways``."""

from .cli import entrypoint

entrypoint()
