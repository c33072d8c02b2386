"""
Hybrid LSTM + Transformer vehicle trajectory prediction for highway traffic.
"""

__version__ = '0.3.0'
