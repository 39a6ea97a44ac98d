"""Bundled synthetic tasks."""

from imgcot.tasks.chainlookup import ChainItem, ChainWorld, generate

__all__ = ["ChainItem", "ChainWorld", "generate"]
