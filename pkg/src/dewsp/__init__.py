"""Equal-weighted subset portfolios ranked by neural return forecasts."""

__version__ = "0.1.0"
