"""
Tests for the Stevedore predictor extensions.
"""
