"""chronos-bridge: batch adapter from factor-series exports to the
quantile-forecast exchange CSV format.

The primary pipeline never imports this package; it only reads the files the
bridge writes.
"""

__version__ = "0.1.0"

from .forecaster import (BridgeConfig, ModelUnavailable, bridge_forecast,
                         load_series, write_exchange_csv)

__all__ = ["BridgeConfig", "ModelUnavailable", "bridge_forecast",
           "load_series", "write_exchange_csv"]
