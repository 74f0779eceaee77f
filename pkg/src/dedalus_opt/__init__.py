"""Rule-driven rewrites for distributed protocols written in a spatiotemporal Datalog dialect."""

__version__ = "0.1.0"
