from pydantic import BaseModel, ConfigDict, Field, model_validator
from typing import Tuple
import enum


class RegionClass(int, enum.Enum):
    IRIS = 0
    PERIOCULAR = 1

    @property
    def label(self) -> str:
        return self.name.lower()


CLASS_NAMES = {RegionClass.IRIS: "iris", RegionClass.PERIOCULAR: "periocular"}


class Box(BaseModel):
    """Normalized center/size box, relative to image width and height"""
    model_config = ConfigDict(frozen=True)

    cx: float = Field(..., ge=0.0, le=1.0)
    cy: float = Field(..., ge=0.0, le=1.0)
    w: float = Field(..., gt=0.0, le=1.0)
    h: float = Field(..., gt=0.0, le=1.0)

    @classmethod
    def from_corners(cls, x0: float, y0: float, x1: float, y1: float) -> "Box":
        return cls(cx=(x0 + x1) / 2.0, cy=(y0 + y1) / 2.0, w=x1 - x0, h=y1 - y0)

    def corners(self) -> Tuple[float, float, float, float]:
        return (
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        )

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return (self.cx, self.cy, self.w, self.h)

    def contains(self, other: "Box", strict: bool = False) -> bool:
        ax0, ay0, ax1, ay1 = self.corners()
        bx0, by0, bx1, by1 = other.corners()
        if strict:
            return ax0 < bx0 and ay0 < by0 and ax1 > bx1 and ay1 > by1
        eps = 1e-9
        return ax0 <= bx0 + eps and ay0 <= by0 + eps and ax1 >= bx1 - eps and ay1 >= by1 - eps


class Annotation(BaseModel):
    model_config = ConfigDict(frozen=True)

    class_id: RegionClass
    box: Box

    @model_validator(mode="after")
    def check_inside_image(self):
        x0, y0, x1, y1 = self.box.corners()
        eps = 2e-6
        if x0 < -eps or y0 < -eps or x1 > 1 + eps or y1 > 1 + eps:
            raise ValueError(f"box {self.box.as_tuple()} extends outside the image")
        return self


class Detection(BaseModel):
    model_config = ConfigDict(frozen=True)

    box: Box
    class_id: RegionClass
    confidence: float = Field(..., ge=0.0, le=1.0)
    image_id: str = ""
