"""Compression toolkit and shift-only inference engine for 1D ECG CNNs."""

CLASSES = ("N", "A", "O", "~")
N_CLASSES = len(CLASSES)

__version__ = "0.1.0"
