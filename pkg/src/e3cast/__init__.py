"""Online ensemble transformer for workload forecasting and a predictive HPA simulator."""

__version__ = "0.1.0"
