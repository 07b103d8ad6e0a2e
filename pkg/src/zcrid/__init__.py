"""Blind OFDM analysis and ZC-feature drone identification."""

__version__ = "0.1.0"
