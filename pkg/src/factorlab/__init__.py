"""factorlab: latent factor extraction, uncertainty-aware factor selection
and expanding-window portfolio backtesting."""

__version__ = "0.1.0"
