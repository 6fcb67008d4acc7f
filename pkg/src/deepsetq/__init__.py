"""Deep Sets and other variable-input encoders for offline RL lane-change decisions."""

__version__ = "0.1.0"
