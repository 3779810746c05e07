"""framecast: multivariate time-series forecasting through grayscale video prediction.

Change panels are rendered as frame sequences under a configurable spatial
layout, a stochastic latent residual model predicts future frames, and decoded
forecasts are benchmarked with an exponentially-weighted sign-accuracy metric
against classical and ablated baselines.
"""

__version__ = "0.1.0"
