"""llelab: numerical laboratory for periodic Lugiato-Lefever waves.

Constructs periodic steady states, verifies diffusive spectral stability of
their Bloch spectra, evolves co-periodic plus localized ("tooth") perturbations
with an exponential integrator, extracts temporal and spatio-temporal phase
modulations, and measures the decay rates and inequality structure of the
perturbation dynamics.
"""

__version__ = "0.1.0"
