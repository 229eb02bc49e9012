"""One-shot tri-plane head avatars on a synthetic oracle, numpy end to end."""

__version__ = "0.1.0"
