"""Kalman filtering seen through the conditional characteristic function."""
