# Services module
from .synth import SynthGenerator, synth_generate
from .metrics import iou, match_detections, pr_and_ap, f_score, mean_iou, evaluate_detections
from .stats import wilcoxon_signed_rank
from .detect_head import decode, encode, nms
from .anchors import kmeans_priors

__all__ = [
    "SynthGenerator",
    "synth_generate",
    "iou",
    "match_detections",
    "pr_and_ap",
    "f_score",
    "mean_iou",
    "evaluate_detections",
    "wilcoxon_signed_rank",
    "decode",
    "encode",
    "nms",
    "kmeans_priors"
]
