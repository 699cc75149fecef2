from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware
import numpy as np

from src.api.models import (
    Descriptor,
    DiversityRequest,
    DiversityResponse,
    EpeRequest,
    EpeResponse,
    EvaluateRequest,
    EvaluateResponse,
    MotionPromptRequest,
    MotionPromptResponse,
)
from src.core import (
    TASK_LABELS,
    EmbeddingMatrix,
    FlowField,
    LandmarkSet,
    build_instruction,
    confusion_matrix,
    diversity_metrics,
    epe,
    frontal_landmarks,
    metrics_report,
    motion_prompt,
    roi_epe,
)
from src.utils.errors import MellmError
from src.utils.logging import get_logger

logger = get_logger(__name__)

app = FastAPI(
    title="MELLM API",
    description="Micro-expression motion prompts, flow errors and recognition metrics",
    version="1.0.0"
)

# Enable CORS
app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)


def _flow(u: list[list[float]], v: list[list[float]]) -> FlowField:
    return FlowField(np.asarray(u, dtype=np.float64), np.asarray(v, dtype=np.float64))


@app.get("/")
async def root():
    """Health check."""
    return {
        "status": "online",
        "message": "MELLM API is running",
        "endpoints": ["/motion-prompt", "/evaluate", "/epe", "/diversity", "/docs"]
    }


@app.post("/motion-prompt", response_model=MotionPromptResponse)
async def build_motion_prompt(request: MotionPromptRequest):
    """
    Describe a flow field region by region and return the prompt text
    together with the matching instruction.
    """
    try:
        flow = _flow(request.u, request.v)
        if request.landmarks is None:
            landmarks = frontal_landmarks(flow.width, flow.height)
        else:
            landmarks = LandmarkSet(np.asarray(request.landmarks, dtype=np.float64))

        prompt = motion_prompt(flow, landmarks, compensate=request.compensate)
        descriptors = [
            Descriptor(
                region=d.region,
                mean_magnitude=d.mean_magnitude,
                max_magnitude=d.max_magnitude,
                direction=d.direction_label,
                angle_deg=None if d.is_static else d.angle_deg,
            )
            for d in prompt.descriptors
        ]
        return MotionPromptResponse(
            success=True,
            descriptors=descriptors,
            prompt=prompt.rendered,
            instruction=build_instruction(request.task, request.baseline_freeform),
        )

    except (MellmError, ValueError) as e:
        logger.info("motion-prompt rejected: %s", e)
        return MotionPromptResponse(success=False, error=str(e))


@app.post("/evaluate", response_model=EvaluateResponse)
async def evaluate(request: EvaluateRequest):
    """UF1, UAR, accuracy and per-class scores of (gt, pred) label pairs."""
    try:
        cm = confusion_matrix(
            ((p.gt, p.pred) for p in request.pairs),
            TASK_LABELS[request.task],
        )
        report = metrics_report(cm)
        return EvaluateResponse(
            success=True,
            labels=list(report.labels),
            uf1=report.uf1,
            uar=report.uar,
            acc=report.acc,
            per_class_recall=list(report.per_class_recall),
            per_class_precision=list(report.per_class_precision),
            per_class_f1=list(report.per_class_f1),
            unparsed_rate=report.unparsed_rate,
            total=report.total,
        )

    except MellmError as e:
        return EvaluateResponse(success=False, error=str(e))


@app.post("/epe", response_model=EpeResponse)
async def flow_error(request: EpeRequest):
    """Mean end-point error, plus ROI end-point error when a mask is given."""
    try:
        pred = _flow(request.pred_u, request.pred_v)
        gt = _flow(request.gt_u, request.gt_v)
        return EpeResponse(
            success=True,
            epe=epe(pred, gt),
            roi_epe=roi_epe(pred, gt, request.mask) if request.mask is not None else None,
        )

    except (MellmError, ValueError) as e:
        return EpeResponse(success=False, error=str(e))


@app.post("/diversity", response_model=DiversityResponse)
async def diversity(request: DiversityRequest):
    """Identity-diversity statistics of an embedding matrix."""
    try:
        report = diversity_metrics(EmbeddingMatrix(np.asarray(request.embeddings, dtype=np.float64)))
        return DiversityResponse(
            success=True,
            std_global=report.std_global,
            cv_global=report.cv_global,
            sim_std_raw=report.sim_std_raw,
            sim_std_x100=report.sim_std_x100,
            note=report.note,
        )

    except (MellmError, ValueError) as e:
        return DiversityResponse(success=False, error=str(e))
