"""Extractor bridge: runs pretrained-encoder architectures over audio/text
and dumps all-layer hidden states as adcue embedding files."""

__version__ = "0.1.0"
