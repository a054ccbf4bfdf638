"""reftrack: synthetic referring-MOT benchmarks, a query-based tracker,
and prompt-conditioned HOTA evaluation."""

__version__ = "0.1.0"
