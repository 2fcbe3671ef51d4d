"""Multidimensional resource pricing for blockchain fee markets.

Per-resource prices are the dual variables of a welfare problem: producers
pack blocks at the current prices, and the network nudges each price toward
the usage its loss function prefers.
"""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"
