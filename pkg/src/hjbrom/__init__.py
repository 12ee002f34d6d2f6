"""Feedback control of parametrized dynamical systems via reduced HJB equations.

Offline: greedy Riccati-based bases on an adaptively partitioned parameter
box, data-driven tensor grids, precomputed evaluation tables and coarse
barycenter value functions. Online: locate the box, refine by policy
iteration and synthesize feedback controls for the full-order system.
"""

from . import basis, bench, cli, domain, hjb, model, pipeline, reduced, riccati

__all__ = [
    "basis",
    "bench",
    "cli",
    "domain",
    "hjb",
    "model",
    "pipeline",
    "reduced",
    "riccati",
]

__version__ = "0.1.0"
