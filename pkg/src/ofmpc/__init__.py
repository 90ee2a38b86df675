"""Offset-free nonlinear MPC toolkit: benchmark models, embedded NLP solver,
steady-state target selection, terminal ingredients, moving-horizon
estimation, and a closed-loop simulation harness."""

__version__ = "0.1.0"
