"""Learned variational space-time interpolation of gappy 2-D fields.

Subpackstructure:
  autodiff   computation graph with double backward
  backend    compiled / numpy convolution kernel selection
  state      multiscale decomposition and augmented states
  prior      bilinear-residual prior and the variational cost
  solver     trainable conv-LSTM descent and the fixed-point solver
  training   supervised loss, patch sampling, optimizer loop
  osse       synthetic truth, satellite-like sampling, OI baseline
  metrics    RMSE scores and spectral resolved-scale diagnostics
  ensemble   multi-seed retraining and uncertainty quantification
  cli        experiment driver
"""

__version__ = "0.1.0"
