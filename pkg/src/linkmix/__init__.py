"""Follower-network growth with information cascades, and estimators for
the link-creation strategies behind it."""
__version__ = "0.1.0"
