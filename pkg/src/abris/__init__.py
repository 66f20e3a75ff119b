"""Black-box variational inference with adaptive reuse of forward-model evaluations."""

__version__ = "0.1.0"
