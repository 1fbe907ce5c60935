"""Programmable sensor array simulator with a self-referenced hardware
Trojan detection pipeline."""

__version__ = "0.1.0"
