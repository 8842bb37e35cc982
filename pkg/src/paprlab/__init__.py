"""OFDM waveform lab: constrained learned modulation vs tone reservation."""

__version__ = "0.1.0"
