"""One-layer GNNs, planted-subgraph grid datasets and the pooling-bias experiments."""

__version__ = "0.1.0"
