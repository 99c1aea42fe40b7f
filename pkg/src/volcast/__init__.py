"""Portfolio volatility forecasting toolkit.

Four estimation schemes (direct-return vs. factor-model covariance, each
with either a naive window or a GARCH(1,1) variance model) plus a rolling
backtest that scores each scheme's ability to rank portfolios by realized
risk using Kendall's tau-b.
"""

__version__ = "0.1.0"
