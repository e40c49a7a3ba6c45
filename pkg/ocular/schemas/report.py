from pydantic import BaseModel, Field, model_validator
from typing import Dict, List, Literal, Optional


class ImageIoU(BaseModel):
    image_id: str
    iou: float = Field(..., ge=0.0, le=1.0)


class ClassMetrics(BaseModel):
    class_id: int
    class_name: str
    mean_iou: float = Field(..., ge=0.0, le=1.0)
    precision: float = Field(..., ge=0.0, le=1.0)
    recall: float = Field(..., ge=0.0, le=1.0)
    f_score: float = Field(..., ge=0.0, le=1.0)
    average_precision: float = Field(..., ge=0.0, le=1.0)
    num_gt: int = 0
    num_detections: int = 0
    true_positives: int = 0
    false_positives: int = 0
    no_ground_truth: bool = False


class EvalReport(BaseModel):
    classes: Dict[str, ClassMetrics]
    mean_average_precision: float = Field(..., ge=0.0, le=1.0)
    per_image_iou: Dict[str, List[ImageIoU]]
    num_images: int
    num_detections: int
    ap_method: str
    iou_threshold: float
    conf_threshold: float

    @model_validator(mode="after")
    def check_map(self):
        if self.classes:
            expected = sum(c.average_precision for c in self.classes.values()) / len(self.classes)
            if abs(expected - self.mean_average_precision) > 1e-12:
                raise ValueError("mAP must equal the mean of per-class AP")
        return self

    def iou_series(self, class_name: str) -> List[float]:
        return [item.iou for item in self.per_image_iou.get(class_name, [])]


class WilcoxonResult(BaseModel):
    n_effective: int = Field(..., ge=0)
    statistic: float = Field(..., ge=0.0)
    w_plus: float = Field(..., ge=0.0)
    w_minus: float = Field(..., ge=0.0)
    p_value: float = Field(..., ge=0.0, le=1.0)
    method: Literal["exact", "normal-approximation"]
    alpha: float = 0.05
    significant: bool


class ClassComparison(BaseModel):
    class_name: str
    multi_mean_iou: float
    single_mean_iou: float
    best: Literal["multi", "single", "tie"]
    wilcoxon: Optional[WilcoxonResult] = None
    verdict: str


class CompareReport(BaseModel):
    multi: EvalReport
    single: EvalReport
    comparisons: List[ClassComparison]
