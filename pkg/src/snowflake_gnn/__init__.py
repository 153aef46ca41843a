"""Per-node receptive-field pruning for deep GCNs, with baselines and a CLI."""

__version__ = "0.1.0"
