"""Speech-based Alzheimer's detection pipeline: embedding stores, audio prep,
trainable feature heads and the training/evaluation harness."""

__version__ = "0.1.0"
