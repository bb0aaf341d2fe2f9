"""Desk-scale teleoperation platform with demonstration-guided learning."""

__version__ = "0.1.0"
