"""Impact point prediction for spin-stabilized projectiles.

Monte Carlo integration of the stochastic modified linear model, mean-field
moment propagation and closed-loop canard guidance.
"""

__version__ = "0.1.0"
