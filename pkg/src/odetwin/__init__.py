"""Continuous-time digital twins: neural ODEs, their training, and an analogue-hardware emulator."""

__version__ = "0.1.0"
