"""Exception hierarchy shared across the pipeline.

The CLI maps these onto exit codes: configuration problems exit 1, data
problems exit 2, violated internal invariants exit 3.
"""


class FracdetError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(FracdetError):
    """Invalid or inconsistent configuration (unknown key, bad value)."""


class DataError(FracdetError):
    """Malformed input data: annotations, images, manifests, plans."""


class GeometryError(FracdetError):
    """Degenerate or out-of-range box arithmetic."""


class StructuralError(FracdetError):
    """Misaligned shapes or lengths between coupled inputs."""


class GradientError(FracdetError):
    """Non-finite gradient encountered during a training step."""

    def __init__(self, layer: str, max_abs_grad: float):
        self.layer = layer
        self.max_abs_grad = max_abs_grad
        super().__init__(
            f"non-finite gradient in layer '{layer}' "
            f"(max |grad| among finite entries: {max_abs_grad:g})"
        )


class TrainingError(FracdetError):
    """Training cannot proceed (e.g. no regression targets in the dataset)."""
