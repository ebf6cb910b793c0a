"""A tiny trainable character-level language model served behind the
catshift model-adapter wire protocol, so audits can run against a real
network that genuinely memorizes, forgets, and recovers."""

__version__ = "0.1.0"
