"""Headless, seeded agent-based island ecosystem with learned hare and fox
behaviour and scripted human interventions."""

__version__ = "0.1.0"
