"""Small counts in the infinite occupancy scheme: exact moments, asymptotic
constants, reproducible simulation and law-of-the-iterated-logarithm checks."""

__version__ = "0.1.0"

from .weights import (AlphaOneLogSq, Finite, PiPolyLog, PiStretchedExp, WeightError,  # noqa: F401
                      WeightModel, Zipf, default_models, parse_family)
