"""Punctured convolutional/Turbo coding workbench with an LSTM neural decoder."""

__version__ = "0.1.0"
