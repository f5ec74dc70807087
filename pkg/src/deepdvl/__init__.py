"""INS/DVL fusion with a learned DVL velocity regressor and a Kalman filter
that accounts for correlated process and measurement noise."""

__version__ = "0.1.0"
