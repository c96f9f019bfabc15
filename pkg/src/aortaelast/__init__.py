"""Vascular ultrasound elastography: simulation, registration, inversion.

Subpackage map:

- ``vesselgen``: randomized parametric vessel cross-sections
- ``meshing``: body-fitted triangle/quad meshes of vessel + surround
- ``fem``: plane-strain nearly incompressible elasticity operators
- ``datagen``: pressure-normalized 128x128 training samples (EGRID files)
- ``ussim``: RF speckle simulation and regularized image registration
- ``itr``: iterative adjoint/BFGS shear-modulus reconstruction
- ``metrics``: modular ratio, NMSE, Dice, strain summaries
- ``cli``: command-line pipeline driver
"""

from .errors import (
    AortaElastError,
    AssemblyError,
    DatasetError,
    MeshingError,
    MetricsError,
    NormalizationError,
    ReconstructionError,
    RegistrationError,
    SolveError,
)

__all__ = [
    "AortaElastError",
    "AssemblyError",
    "DatasetError",
    "MeshingError",
    "MetricsError",
    "NormalizationError",
    "ReconstructionError",
    "RegistrationError",
    "SolveError",
]

__version__ = "0.1.0"
