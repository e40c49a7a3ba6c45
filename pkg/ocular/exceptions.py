"""
Exception hierarchy for the ocular detector
"""
from typing import Optional


class OcularError(Exception):
    """Base class for every error raised by the package"""
    pass


class ShapeError(OcularError, ValueError):
    """Tensor or layer shape mismatch"""

    def __init__(self, message: str, layer_index: Optional[int] = None):
        if layer_index is not None:
            message = f"layer {layer_index}: {message}"
        super().__init__(message)
        self.layer_index = layer_index


class ConfigError(OcularError, ValueError):
    """Invalid network, training or experiment configuration"""
    pass


class FormatError(OcularError):
    """Malformed weights, image, annotation, detection or manifest file"""

    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None):
        location = ""
        if path is not None:
            location = f"{path}"
            if line is not None:
                location += f":{line}"
            location += ": "
        super().__init__(f"{location}{message}")
        self.path = path
        self.line = line


class DatasetError(OcularError, ValueError):
    """Empty or inconsistent dataset"""
    pass


class EvaluationError(OcularError, ValueError):
    """Evaluation inputs that cannot be scored"""
    pass


class NumericalError(OcularError):
    """Numerical failure (divergence, degenerate statistics)"""
    pass


class TrainingDivergedError(NumericalError):
    """Loss became non-finite during training"""

    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch}: loss={loss}")
        self.epoch = epoch
        self.loss = loss


class DegenerateTestError(NumericalError):
    """Paired test has no nonzero differences"""

    def __init__(self, message: str = "degenerate: no nonzero pairs"):
        super().__init__(message)
