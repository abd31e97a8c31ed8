"""GP-corrected human-driver modelling and chance-constrained MPC for mixed platoons."""

__version__ = "0.1.0"
