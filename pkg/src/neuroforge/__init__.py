"""Growth and pruning architecture search over max/coincidence neuron networks."""

__version__ = "0.1.0"
