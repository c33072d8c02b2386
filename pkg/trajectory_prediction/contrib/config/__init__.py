"""
Expose bundled run configuration file paths as Python variables.
"""
import os

import importlib_resources

DEMO_CONFIG_PATH = importlib_resources.files(
    "trajectory_prediction") / os.path.join("contrib", "config", "demo.yaml")

CURVED_CONFIG_PATH = importlib_resources.files(
    "trajectory_prediction") / os.path.join("contrib", "config", "curved.yaml")

INTERACTION_CONFIG_PATH = importlib_resources.files(
    "trajectory_prediction") / os.path.join("contrib", "config", "interaction.yaml")
