"""
TVineSynth tools - truncated C-vine synthetic data generation and its
privacy / utility evaluation harness.
"""

__version__ = "1.0.0"
