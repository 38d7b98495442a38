"""Secure embedded logging: encrypted, tamper-evident log memory units,
the controller logging lifecycle, porting verification and a BMS simulator."""

__version__ = "0.1.0"
