"""2-bit (QPSK) phase-quantized anti-jamming beamforming."""

__version__ = "0.1.0"
