from .params import TvL1Params, SynthConfig, EndpointConfig
from .flow_field import FlowField, GrayImage, to_gray, warp_image, magnitude_angle
from .flow_io import read_flo, write_flo, load_flo, save_flo, read_image, write_image, write_rgb
from .tvl1_solver import TVL1Solver, FlowResult, estimate_flow_tvl1, tvl1_energy
from .flow_vis import flow_to_color, flow_panel
from .fgmu import (
    TASK_LABELS,
    REGION_NAMES,
    LandmarkSet,
    MotionDescriptor,
    MotionPrompt,
    frontal_landmarks,
    roi_masks,
    roi_union_mask,
    quantize_direction,
    motion_prompt,
    parse_motion_prompt,
    build_instruction,
)
from .synthgen import SyntheticGenerator, SyntheticSample, MotionParams, generate_sample, write_sample, load_sample
from .evalkit import (
    UNPARSED,
    EmbeddingMatrix,
    confusion_matrix,
    metrics_report,
    diversity_metrics,
    epe,
    roi_epe,
    stage1_loss,
    stage2_loss,
    report_to_json,
)
from .llm_client import ChatClient, InferenceResult, parse_response

__all__ = [
    'TvL1Params', 'SynthConfig', 'EndpointConfig',
    'FlowField', 'GrayImage', 'to_gray', 'warp_image', 'magnitude_angle',
    'read_flo', 'write_flo', 'load_flo', 'save_flo', 'read_image', 'write_image', 'write_rgb',
    'TVL1Solver', 'FlowResult', 'estimate_flow_tvl1', 'tvl1_energy',
    'flow_to_color', 'flow_panel',
    'TASK_LABELS', 'REGION_NAMES', 'LandmarkSet', 'MotionDescriptor', 'MotionPrompt',
    'frontal_landmarks', 'roi_masks', 'roi_union_mask', 'quantize_direction',
    'motion_prompt', 'parse_motion_prompt', 'build_instruction',
    'SyntheticGenerator', 'SyntheticSample', 'MotionParams', 'generate_sample',
    'write_sample', 'load_sample',
    'UNPARSED', 'EmbeddingMatrix', 'confusion_matrix', 'metrics_report', 'diversity_metrics',
    'epe', 'roi_epe', 'stage1_loss', 'stage2_loss', 'report_to_json',
    'ChatClient', 'InferenceResult', 'parse_response',
]
