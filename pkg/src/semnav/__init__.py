"""Semantic object-goal navigation on a 2D occupancy grid.

Memory graph with anchor compaction, subgraph reasoning against a
pluggable oracle, frontier utility scoring and weighted-latency goal
selection, wired together by an episode harness.
"""

__version__ = "0.1.0"
