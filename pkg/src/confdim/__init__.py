"""Discrete p-modulus, hyperbolic fillings and weight certificates on finite metric spaces.

Submodules:

* :mod:`confdim.metric_spaces` - point clouds, generators, metric audits
* :mod:`confdim.nets_filling` - nested nets and the filling graph
* :mod:`confdim.modulus` - path families and the modulus solver
* :mod:`confdim.gauge_density` - gauge metrics and their admissible densities
* :mod:`confdim.weight_pipeline` - the weight construction on the resampled graph
* :mod:`confdim.metric_builder` - the boundary metric d_rho
* :mod:`confdim.verification` - certificates for the weight hypotheses
* :mod:`confdim.cli` - the ``confdim`` command
"""
__version__ = "0.1.0"

from .errors import (ConfdimError, ConstantsError, ConstructionError, DegenerateSpaceError,
                     DomainError, InsufficientDepthError, ParameterError, PathCapError,
                     SamplingError, SizeError, UnsupportedExponentError)

__all__ = [
    "__version__", "ConfdimError", "ConstantsError", "ConstructionError", "DegenerateSpaceError",
    "DomainError", "InsufficientDepthError", "ParameterError", "PathCapError", "SamplingError",
    "SizeError", "UnsupportedExponentError",
]
