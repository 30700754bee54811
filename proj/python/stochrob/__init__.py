"""Attacks and robustness certificates for stochastic classifiers."""

from ._stochrob import *  # noqa: F401,F403
from ._stochrob import __doc__  # noqa: F401

__version__ = "0.1.0"
