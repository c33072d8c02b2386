"""
Predictor plugins loaded through stevedore.
"""
