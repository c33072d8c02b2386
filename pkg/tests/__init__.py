"""
Tests for trajectory_prediction.
"""
