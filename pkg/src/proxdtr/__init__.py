"""Proxy-variable identification and estimation of optimal two-stage treatment regimes."""

__version__ = "0.1.0"
