from typing import Literal, Optional

from pydantic import BaseModel, Field


class MotionPromptRequest(BaseModel):
    """
    Flow components plus optional landmarks; everything in one call.

    Example:
    {
        "u": [[0.0, 0.1, ...], ...],
        "v": [[0.0, -0.2, ...], ...],
        "compensate": true,
        "task": "three_class"
    }
    """
    u: list[list[float]] = Field(description="Horizontal flow component, rows of pixels")
    v: list[list[float]] = Field(description="Vertical flow component (+down), same shape as u")
    landmarks: Optional[list[list[float]]] = Field(
        default=None,
        description="68 [x, y] points; the frontal template scaled to the flow when omitted"
    )
    compensate: bool = Field(
        default=True,
        description="Subtract the nasal-tip mean flow before describing regions"
    )
    task: Literal["three_class", "seven_class"] = Field(
        default="three_class",
        description="Label set named in the instruction"
    )
    baseline_freeform: bool = Field(
        default=False,
        description="Return the free-form baseline instruction instead of the three-step one"
    )


class Descriptor(BaseModel):
    region: str
    mean_magnitude: float
    max_magnitude: float
    direction: str
    angle_deg: Optional[int] = None  # null for static regions


class MotionPromptResponse(BaseModel):
    success: bool
    descriptors: Optional[list[Descriptor]] = None
    prompt: Optional[str] = None
    instruction: Optional[str] = None
    error: Optional[str] = None


class LabelPair(BaseModel):
    gt: str
    pred: str


class EvaluateRequest(BaseModel):
    """
    Example:
    {
        "task": "three_class",
        "pairs": [{"gt": "positive", "pred": "positive"}, {"gt": "surprise", "pred": "UNPARSED"}]
    }
    """
    task: Literal["three_class", "seven_class"] = "three_class"
    pairs: list[LabelPair] = Field(min_length=1, description="(ground truth, prediction) per sample")


class EvaluateResponse(BaseModel):
    success: bool
    labels: Optional[list[str]] = None
    uf1: Optional[float] = None
    uar: Optional[float] = None
    acc: Optional[float] = None
    per_class_recall: Optional[list[float]] = None
    per_class_precision: Optional[list[float]] = None
    per_class_f1: Optional[list[float]] = None
    unparsed_rate: Optional[float] = None
    total: Optional[int] = None
    error: Optional[str] = None


class EpeRequest(BaseModel):
    pred_u: list[list[float]]
    pred_v: list[list[float]]
    gt_u: list[list[float]]
    gt_v: list[list[float]]
    mask: Optional[list[list[int]]] = Field(
        default=None,
        description="Binary ROI mask; adds the ROI end-point error when given"
    )


class EpeResponse(BaseModel):
    success: bool
    epe: Optional[float] = None
    roi_epe: Optional[float] = None
    error: Optional[str] = None


class DiversityRequest(BaseModel):
    embeddings: list[list[float]] = Field(description="One identity embedding per row, n >= 2")


class DiversityResponse(BaseModel):
    success: bool
    std_global: Optional[float] = None
    cv_global: Optional[float] = None
    sim_std_raw: Optional[float] = None
    sim_std_x100: Optional[float] = None
    note: Optional[str] = None
    error: Optional[str] = None
