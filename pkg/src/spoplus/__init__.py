"""Predict-then-optimize toolkit: linear-objective oracles, SPO/SPO+ losses,
trainable predictors, synthetic data and calibration checks."""

__version__ = "0.1.0"
