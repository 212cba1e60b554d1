"""Joint estimation of website and time-varying user ideology from share logs."""

__version__ = "0.1.0"
