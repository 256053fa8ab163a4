"""Tire-road friction estimation workbench.

Simulates a four-wheel vehicle on piecewise-constant friction, conditions
the per-wheel slip and force signals and estimates the friction coefficient
with a windowed nonlinear least-squares fit or a time-delay neural network.
"""

__version__ = "0.1.0"
