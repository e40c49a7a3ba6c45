from pydantic import BaseModel, ConfigDict, Field, model_validator
from typing import List, Literal, Optional, Tuple
import enum


class Profile(str, enum.Enum):
    FULL = "full"
    TINY = "tiny"


class LayerKind(str, enum.Enum):
    CONV = "conv"
    MAXPOOL = "maxpool"
    DETECTION = "detection"


class LayerGroup(str, enum.Enum):
    EXTERNAL = "external"
    INTERNAL = "internal"
    NONE = "none"


# Cell units on the output grid
DEFAULT_ANCHORS: Tuple[Tuple[float, float], ...] = (
    (0.6, 0.9),
    (1.2, 1.8),
    (2.4, 3.2),
    (4.5, 5.5),
    (8.0, 9.0),
)

Shape3 = Tuple[int, int, int]


class LayerSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    index: int = Field(..., ge=0, le=24)
    kind: LayerKind
    group: LayerGroup = LayerGroup.NONE
    filters: Optional[int] = None
    kernel: int = 0
    stride: int = 0
    expected_input_shape: Shape3
    expected_output_shape: Shape3

    @property
    def size_label(self) -> str:
        if self.kind == LayerKind.DETECTION:
            return ""
        return f"{self.kernel} x {self.kernel} / {self.stride}"


class NetworkConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    num_classes: int
    num_anchors: int = 5
    input_channels: Literal[1, 3] = 3
    input_size: int = 416
    anchor_priors: List[Tuple[float, float]] = Field(default_factory=lambda: list(DEFAULT_ANCHORS))
    profile: Profile = Profile.FULL
    leaky_slope: float = Field(0.1, gt=0.0, lt=1.0)

    @model_validator(mode="after")
    def check_head(self):
        if self.num_classes not in (1, 2):
            raise ValueError(f"num_classes must be 1 or 2, got {self.num_classes}")
        if self.num_anchors <= 0:
            raise ValueError(f"num_anchors must be positive, got {self.num_anchors}")
        if self.input_size <= 0 or self.input_size % 32 != 0:
            raise ValueError(f"input_size must be a positive multiple of 32, got {self.input_size}")
        if len(self.anchor_priors) != self.num_anchors:
            raise ValueError(
                f"expected {self.num_anchors} anchor priors, got {len(self.anchor_priors)}"
            )
        if any(pw <= 0 or ph <= 0 for pw, ph in self.anchor_priors):
            raise ValueError("anchor priors must be positive")
        return self

    @property
    def head_filters(self) -> int:
        """filters = (C + 5) x A"""
        return (self.num_classes + 5) * self.num_anchors

    @property
    def grid_size(self) -> int:
        return self.input_size // 32
