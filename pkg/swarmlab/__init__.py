# swarmlab package: multi-swarm piece-selection simulator and diagnostics

__version__ = "1.0.0"
