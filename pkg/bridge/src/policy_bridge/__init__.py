"""External-policy adapter: serves the RL harness wire protocol around a
neural language model, with a deterministic tiny stand-in for CI."""

__version__ = "0.1.0"
