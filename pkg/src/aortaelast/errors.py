"""Exception types shared across the toolkit."""


class AortaElastError(Exception):
    """Base class for all toolkit errors."""


class MeshingError(AortaElastError):
    """Mesh construction failed (degenerate contour, inverted element)."""

    def __init__(self, message, spec_seed=None):
        if spec_seed is not None:
            message = f"{message} (vessel spec seed {spec_seed})"
        super().__init__(message)
        self.spec_seed = spec_seed


class AssemblyError(AortaElastError):
    """Invalid inputs to FE assembly (e.g. non-positive modulus)."""


class SolveError(AortaElastError):
    """Linear system could not be solved (singular / unconstrained)."""


class NormalizationError(AortaElastError):
    """Invalid normalization constant (non-positive pressure, zero field)."""


class RegistrationError(AortaElastError):
    """Image registration failed to converge."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ReconstructionError(AortaElastError):
    """Iterative modulus reconstruction failed."""

    def __init__(self, message, iteration=None):
        if iteration is not None:
            message = f"{message} (outer iteration {iteration})"
        super().__init__(message)
        self.iteration = iteration


class MetricsError(AortaElastError):
    """Invalid inputs to an evaluation metric."""


class DatasetError(AortaElastError):
    """Dataset I/O or manifest consistency failure."""
