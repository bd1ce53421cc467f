"""Dilute Bose gas on the torus: ideal-gas thermodynamics, scattering data,
entropy inequalities, truncated Fock space checks and exact rate bookkeeping."""

__version__ = "0.1.0"
