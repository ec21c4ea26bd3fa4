"""Safety-filtered control pipeline: simulation, surrogate learning,
influence-based curation, smooth parameter adaptation, and certification."""

__version__ = "0.1.0"
