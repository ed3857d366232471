"""Traffic-system planning for swarm factories: embedding MILP, search and plan generation."""

__version__ = "0.1.0"
