"""Graph federated learning simulator with privatized server mixing."""

__version__ = "0.1.0"
