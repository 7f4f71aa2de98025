"""Simulation and analysis of gated photon-correlation imaging of quantum emitters."""

from .errors import *  # noqa: F401,F403

__version__ = "0.1.0"
