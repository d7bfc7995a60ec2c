"""Greedy grounded span-merging parser with reduced-expressivity variants."""

__version__ = "0.1.0"
