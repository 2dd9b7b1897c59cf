"""Load-imbalance simulator for clusters under multifractal traffic."""

__version__ = "0.1.0"
