"""Inter-datacenter TCP bandwidth measurement and factor analysis toolkit."""

__version__ = "0.1.0"
