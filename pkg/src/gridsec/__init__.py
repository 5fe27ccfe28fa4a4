"""Secure distributed state estimation for networked power systems."""
__version__ = "0.1.0"
