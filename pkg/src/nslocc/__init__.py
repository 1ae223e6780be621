"""Toolkit for reducing non-signalling multi-round channels to
measure-then-apply protocols, with risk-gap experiments."""

__version__ = "0.1.0"
