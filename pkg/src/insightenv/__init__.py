"""Deterministic analysis environment over a synthetic instant-retail warehouse.

A semantic-catalog-backed query engine, a structured analysis state machine,
and a reward stack, wired together so scripted policies can run full episodes
with no network access.
"""

__version__ = "0.1.0"
