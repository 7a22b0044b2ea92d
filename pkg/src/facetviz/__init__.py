"""Multifaceted neuron visualization on a small numpy convnet."""

__version__ = "0.1.0"
