"""
Flow-guided motion prompts.

Expression flow + 68 facial landmarks -> 29 elliptical regions -> per-region
descriptors (mean magnitude, max magnitude, dominant direction) -> the
key-value motion prompt and the three-step instruction sent to the model.

"Left"/"Right" region names refer to the subject's side, as in the 68-point
annotation (left eye = points 42-47, on the image right).
"""
import math
import re
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Literal

import numpy as np

from src.core.flow_field import FlowField, vector_angle
from src.utils.errors import LandmarkError, PromptFormatError, RoiError

Task = Literal["three_class", "seven_class"]

THREE_CLASS_LABELS = ("positive", "negative", "surprise")
SEVEN_CLASS_LABELS = ("happiness", "disgust", "contempt", "surprise", "fear", "anger", "sadness")
TASK_LABELS: dict[str, tuple[str, ...]] = {
    "three_class": THREE_CLASS_LABELS,
    "seven_class": SEVEN_CLASS_LABELS,
}

NUM_LANDMARKS = 68
NOSE_TIP_INDEX = 30
NASAL_TIP = "Nasal Tip"
ROI_RADII = (0.18, 0.12)  # × inter-ocular distance (x, y)
STATIC_THRESHOLD = 1e-6
STATIC_LABEL = "static"

# sector k is centred on k * 45°
DIRECTION_LABELS = ("right", "up-right", "up", "up-left", "left", "down-left", "down", "down-right")

# name -> (landmark indices averaged, offset in inter-ocular units)
REGION_ANCHORS: dict[str, tuple[tuple[int, ...], tuple[float, float]]] = {
    "Forehead Center": ((19, 24), (0.0, -0.45)),
    "Glabella": ((21, 22), (0.0, -0.05)),
    "Left Outer Eyebrow": ((25, 26), (0.0, 0.0)),
    "Right Outer Eyebrow": ((17, 18), (0.0, 0.0)),
    "Left Inner Eyebrow": ((22, 23), (0.0, 0.0)),
    "Right Inner Eyebrow": ((20, 21), (0.0, 0.0)),
    "Left Upper Eyelid": ((43, 44), (0.0, 0.0)),
    "Right Upper Eyelid": ((37, 38), (0.0, 0.0)),
    "Left Lower Eyelid": ((46, 47), (0.0, 0.0)),
    "Right Lower Eyelid": ((40, 41), (0.0, 0.0)),
    "Nose Root": ((27,), (0.0, 0.0)),
    NASAL_TIP: ((NOSE_TIP_INDEX,), (0.0, 0.0)),
    "Left Nose Wing": ((35,), (0.0, 0.0)),
    "Right Nose Wing": ((31,), (0.0, 0.0)),
    "Left Upper Cheek": ((46, 47, 35, 14), (0.0, 0.0)),
    "Right Upper Cheek": ((40, 41, 31, 2), (0.0, 0.0)),
    "Left Lower Cheek": ((54, 12), (0.0, 0.0)),
    "Right Lower Cheek": ((48, 4), (0.0, 0.0)),
    "Left Nasolabial Fold": ((35, 54), (0.0, 0.0)),
    "Right Nasolabial Fold": ((31, 48), (0.0, 0.0)),
    "Upper Lip Left": ((52,), (0.0, 0.0)),
    "Upper Lip Center": ((51,), (0.0, 0.0)),
    "Upper Lip Right": ((50,), (0.0, 0.0)),
    "Left Lip Corner": ((54,), (0.0, 0.0)),
    "Right Lip Corner": ((48,), (0.0, 0.0)),
    "Lower Lip Left": ((56,), (0.0, 0.0)),
    "Lower Lip Center": ((57,), (0.0, 0.0)),
    "Lower Lip Right": ((58,), (0.0, 0.0)),
    "Chin Center": ((57, 8), (0.0, 0.0)),
}
REGION_NAMES: tuple[str, ...] = tuple(REGION_ANCHORS)


def _frontal_template() -> np.ndarray:
    """Hand-placed frontal 68-point face in unit coordinates."""
    phi = np.pi * np.arange(17) / 16
    jaw = np.stack([0.5 - 0.42 * np.cos(phi), 0.40 + 0.50 * np.sin(phi)], axis=1)

    right_brow = [(0.17, 0.30), (0.23, 0.26), (0.30, 0.25), (0.37, 0.26), (0.43, 0.28)]
    left_brow = [(1.0 - x, y) for x, y in reversed(right_brow)]
    nose_bridge = [(0.50, 0.36), (0.50, 0.43), (0.50, 0.50), (0.50, 0.57)]
    nostrils = [(0.42, 0.62), (0.46, 0.635), (0.50, 0.645), (0.54, 0.635), (0.58, 0.62)]
    right_eye = [(0.24, 0.37), (0.28, 0.345), (0.33, 0.345), (0.37, 0.375), (0.33, 0.39), (0.28, 0.39)]
    left_eye = [(0.63, 0.375), (0.67, 0.345), (0.72, 0.345), (0.76, 0.37), (0.72, 0.39), (0.67, 0.39)]
    outer_lip = [
        (0.36, 0.74), (0.41, 0.715), (0.46, 0.70), (0.50, 0.705), (0.54, 0.70), (0.59, 0.715),
        (0.64, 0.74), (0.59, 0.785), (0.54, 0.80), (0.50, 0.805), (0.46, 0.80), (0.41, 0.785),
    ]
    inner_lip = [
        (0.38, 0.74), (0.46, 0.725), (0.50, 0.728), (0.54, 0.725),
        (0.62, 0.74), (0.54, 0.76), (0.50, 0.763), (0.46, 0.76),
    ]
    rest = right_brow + left_brow + nose_bridge + nostrils + right_eye + left_eye + outer_lip + inner_lip
    return np.vstack([jaw, np.asarray(rest)])


FRONTAL_TEMPLATE = _frontal_template()


@dataclass(frozen=True, eq=False)
class LandmarkSet:
    """68 (x, y) points in pixels, standard 68-point annotation order."""
    points: np.ndarray

    def __post_init__(self):
        points = np.array(self.points, dtype=np.float64, copy=True)
        if points.shape != (NUM_LANDMARKS, 2):
            raise LandmarkError(f"Expected {NUM_LANDMARKS} (x, y) points, got shape {points.shape}")
        if not np.all(np.isfinite(points)):
            raise LandmarkError("Landmark coordinates must be finite")
        points.setflags(write=False)
        object.__setattr__(self, "points", points)
        if self.inter_ocular_distance() <= 0.0:
            raise LandmarkError("Degenerate landmarks: zero inter-ocular distance")

    def eye_centers(self) -> tuple[np.ndarray, np.ndarray]:
        return self.points[36:42].mean(axis=0), self.points[42:48].mean(axis=0)

    def inter_ocular_distance(self) -> float:
        right, left = self.eye_centers()
        return float(np.hypot(*(left - right)))

    def scaled(self, factor: float) -> "LandmarkSet":
        return LandmarkSet(self.points * factor)

    def check_bounds(self, width: int, height: int) -> None:
        x, y = self.points[:, 0], self.points[:, 1]
        if np.any(x < 0) or np.any(y < 0) or np.any(x > width - 1) or np.any(y > height - 1):
            raise LandmarkError(f"Landmarks fall outside the {width}x{height} image")

    @classmethod
    def from_text(cls, text: str) -> "LandmarkSet":
        """Parse 68 lines of `index,x,y` (blank lines and # comments ignored)."""
        points: dict[int, tuple[float, float]] = {}
        for line_no, line in enumerate(text.splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 3:
                raise LandmarkError(f"Line {line_no}: expected 'index,x,y', got {line!r}")
            try:
                index, x, y = int(parts[0]), float(parts[1]), float(parts[2])
            except ValueError as e:
                raise LandmarkError(f"Line {line_no}: {e}") from e
            if not 0 <= index < NUM_LANDMARKS or index in points:
                raise LandmarkError(f"Line {line_no}: invalid or repeated index {index}")
            points[index] = (x, y)
        if len(points) != NUM_LANDMARKS:
            raise LandmarkError(f"Expected {NUM_LANDMARKS} landmarks, got {len(points)}")
        return cls(np.asarray([points[i] for i in range(NUM_LANDMARKS)]))

    def to_text(self) -> str:
        return "".join(f"{i},{x:.3f},{y:.3f}\n" for i, (x, y) in enumerate(self.points))

    @classmethod
    def load(cls, path: str | Path) -> "LandmarkSet":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


def frontal_landmarks(width: int, height: int) -> LandmarkSet:
    """The canonical frontal template placed in a centred square of side min(width, height)."""
    side = min(width, height)
    offset = np.array([(width - side) / 2.0, (height - side) / 2.0])
    return LandmarkSet(FRONTAL_TEMPLATE * (side - 1) + offset)


@dataclass(frozen=True, eq=False)
class RoiMask:
    name: str
    pixels: np.ndarray  # bool (height, width)
    center: tuple[float, float]
    radii: tuple[float, float]

    def coordinates(self) -> np.ndarray:
        """(n, 2) array of (x, y), row-major order."""
        ys, xs = np.nonzero(self.pixels)
        return np.stack([xs, ys], axis=1)

    @property
    def size(self) -> int:
        return int(self.pixels.sum())


def region_anchor(landmarks: LandmarkSet, name: str) -> tuple[float, float]:
    indices, (dx, dy) = REGION_ANCHORS[name]
    iod = landmarks.inter_ocular_distance()
    cx, cy = landmarks.points[list(indices)].mean(axis=0)
    return float(cx + dx * iod), float(cy + dy * iod)


def _ellipse(center: tuple[float, float], radii: tuple[float, float], width: int, height: int) -> np.ndarray:
    cx, cy = center
    rx, ry = radii
    ys, xs = np.indices((height, width), dtype=np.float64)
    inside = ((xs - cx) / rx) ** 2 + ((ys - cy) / ry) ** 2 <= 1.0
    if not inside.any():
        # too small to cover a pixel centre: keep the nearest in-bounds pixel
        px = int(min(max(round(cx), 0), width - 1))
        py = int(min(max(round(cy), 0), height - 1))
        inside[py, px] = True
    return inside


def roi_masks(landmarks: LandmarkSet, width: int, height: int) -> dict[str, RoiMask]:
    """
    The 29 canonical regions, in canonical order.

    Each region is an axis-aligned ellipse around its landmark anchor with
    radii (0.18, 0.12) × inter-ocular distance, clipped to the image.

    Raises:
        LandmarkError: landmarks outside the image
    """
    landmarks.check_bounds(width, height)
    iod = landmarks.inter_ocular_distance()
    radii = (ROI_RADII[0] * iod, ROI_RADII[1] * iod)

    masks = {}
    for name in REGION_NAMES:
        center = region_anchor(landmarks, name)
        masks[name] = RoiMask(name, _ellipse(center, radii, width, height), center, radii)
    return masks


def roi_union_mask(masks: dict[str, RoiMask]) -> np.ndarray:
    """Binary (0/1) field of every region pixel."""
    union = np.zeros_like(next(iter(masks.values())).pixels)
    for mask in masks.values():
        union |= mask.pixels
    return union.astype(np.uint8)


def _checked_mask(flow: FlowField, mask: RoiMask) -> np.ndarray:
    if mask.pixels.shape != flow.shape:
        raise RoiError(f"Mask '{mask.name}' shape {mask.pixels.shape} differs from flow {flow.shape}")
    if not mask.pixels.any():
        raise RoiError(f"Mask '{mask.name}' is empty")
    return mask.pixels


def nose_tip_mean_flow(flow: FlowField, masks: dict[str, RoiMask]) -> tuple[float, float]:
    """
    Mean (u, v) over the nasal-tip region, the rigid-motion estimate.

    Raises:
        RoiError: nasal-tip mask missing or empty
    """
    if NASAL_TIP not in masks:
        raise RoiError(f"Mask set has no '{NASAL_TIP}' region")
    pixels = _checked_mask(flow, masks[NASAL_TIP])
    return float(flow.u[pixels].mean()), float(flow.v[pixels].mean())


def compensate_head(flow: FlowField, offset: tuple[float, float]) -> FlowField:
    """Subtract a constant offset from every vector."""
    return FlowField(flow.u - offset[0], flow.v - offset[1])


def direction_sector(angle_deg: float) -> str:
    """Label of the 45° sector [c − 22.5°, c + 22.5°) containing the angle."""
    sector = math.floor((angle_deg % 360.0 + 22.5) / 45.0) % 8
    return DIRECTION_LABELS[sector]


def quantize_direction(u: float, v: float) -> tuple[str, int]:
    """
    Eight-way direction label plus integer angle.

    Example:
        quantize_direction(0.574, 0.819) -> ("down-right", 305)
    """
    if not (math.isfinite(u) and math.isfinite(v)):
        raise ValueError(f"Non-finite vector ({u}, {v})")
    if math.hypot(u, v) < STATIC_THRESHOLD:
        return STATIC_LABEL, 0
    angle = int(math.floor(float(vector_angle(u, v)) + 0.5)) % 360
    return direction_sector(angle), angle


def round_half_up(value: float, places: int = 3) -> float:
    quantum = Decimal(1).scaleb(-places)
    return float(Decimal(repr(float(value))).quantize(quantum, rounding=ROUND_HALF_UP))


@dataclass(frozen=True)
class MotionDescriptor:
    region: str
    mean_magnitude: float
    max_magnitude: float
    direction_label: str
    angle_deg: int

    def __post_init__(self):
        if not self.max_magnitude >= self.mean_magnitude >= 0:
            raise PromptFormatError(
                f"{self.region}: need max_magnitude >= mean_magnitude >= 0, "
                f"got {self.max_magnitude}, {self.mean_magnitude}"
            )
        if self.direction_label == STATIC_LABEL:
            return
        if not 0 <= self.angle_deg < 360:
            raise PromptFormatError(f"{self.region}: angle {self.angle_deg} outside [0, 360)")
        if direction_sector(self.angle_deg) != self.direction_label:
            raise PromptFormatError(
                f"{self.region}: label '{self.direction_label}' does not match angle {self.angle_deg}"
            )

    @property
    def is_static(self) -> bool:
        return self.direction_label == STATIC_LABEL

    def render(self) -> str:
        if self.is_static:
            direction = f"{STATIC_LABEL} (—)"
        else:
            direction = f"{self.direction_label} ({self.angle_deg}°)"
        return (
            f'{{region: "{self.region}", mean_magnitude: {self.mean_magnitude:.3f}, '
            f'max_magnitude: {self.max_magnitude:.3f}, direction: "{direction}"}}'
        )


def describe_roi(flow: FlowField, mask: RoiMask) -> MotionDescriptor:
    """
    Mean and max per-pixel magnitude over the region, plus the direction of
    the mean flow vector. Magnitudes rounded half-up to 3 decimals.
    """
    pixels = _checked_mask(flow, mask)
    u = flow.u[pixels]
    v = flow.v[pixels]
    magnitude = np.sqrt(u ** 2 + v ** 2)

    label, angle = quantize_direction(float(u.mean()), float(v.mean()))
    return MotionDescriptor(
        region=mask.name,
        mean_magnitude=round_half_up(float(magnitude.mean())),
        max_magnitude=round_half_up(float(magnitude.max())),
        direction_label=label,
        angle_deg=angle,
    )


def describe_all(flow: FlowField, masks: dict[str, RoiMask]) -> list[MotionDescriptor]:
    return [describe_roi(flow, masks[name]) for name in REGION_NAMES]


def build_motion_prompt(descriptors: list[MotionDescriptor]) -> str:
    """
    One key-value line per region, canonical order, newline separated.

    Raises:
        PromptFormatError: wrong count or order
    """
    if len(descriptors) != len(REGION_NAMES):
        raise PromptFormatError(f"Expected {len(REGION_NAMES)} descriptors, got {len(descriptors)}")
    for expected, descriptor in zip(REGION_NAMES, descriptors):
        if descriptor.region != expected:
            raise PromptFormatError(f"Expected region '{expected}', got '{descriptor.region}'")
    return "\n".join(d.render() for d in descriptors)


_LINE_PATTERN = re.compile(
    r'^\{region: "(?P<region>[^"]+)", '
    r"mean_magnitude: (?P<mean>\d+\.\d{3}), "
    r"max_magnitude: (?P<max>\d+\.\d{3}), "
    r'direction: "(?P<label>[a-z-]+) \((?:(?P<angle>\d+)°|—)\)"\}$'
)


def parse_motion_prompt(text: str) -> list[MotionDescriptor]:
    """Inverse of build_motion_prompt for well-formed lines."""
    descriptors = []
    for line in text.splitlines():
        if not line.strip():
            continue
        match = _LINE_PATTERN.match(line.strip())
        if match is None:
            raise PromptFormatError(f"Unparseable motion prompt line: {line!r}")
        label = match["label"]
        angle = int(match["angle"]) if match["angle"] is not None else 0
        descriptors.append(MotionDescriptor(
            region=match["region"],
            mean_magnitude=float(match["mean"]),
            max_magnitude=float(match["max"]),
            direction_label=label,
            angle_deg=angle,
        ))
    return descriptors


@dataclass(frozen=True)
class MotionPrompt:
    descriptors: tuple[MotionDescriptor, ...]
    rendered: str

    @classmethod
    def from_descriptors(cls, descriptors: list[MotionDescriptor]) -> "MotionPrompt":
        return cls(tuple(descriptors), build_motion_prompt(list(descriptors)))


def motion_prompt(flow: FlowField, landmarks: LandmarkSet, compensate: bool = True) -> MotionPrompt:
    """Flow + landmarks -> motion prompt, optionally removing the nasal-tip motion first."""
    masks = roi_masks(landmarks, flow.width, flow.height)
    if compensate:
        flow = compensate_head(flow, nose_tip_mean_flow(flow, masks))
    return MotionPrompt.from_descriptors(describe_all(flow, masks))


def _label_list(labels: tuple[str, ...]) -> str:
    return ", ".join(labels[:-1]) + ", or " + labels[-1]


_FREEFORM_TEMPLATE = (
    "Identify the dynamic changes in facial features between two images, recognize the "
    "Action Units, and infer the Micro-Expression being conveyed. Finally, classify the "
    "Micro-Expression into one of the following categories: {labels}, and clearly state "
    "the chosen category in the answer."
)

_FGMU_TEMPLATE = """\
You are given a structured motion prompt describing the optical flow between the onset \
and apex frames of a facial micro-expression. Each line reports one facial region: its \
mean and maximum motion magnitude in pixels and its dominant motion direction with the \
precise angle (0° = right, 90° = up, 180° = left, 270° = down). Head motion has already \
been compensated using the nasal tip.

Carry out the following three steps.

1) Analysis of Motion in ROIs and Associated Action Units
Analyze the magnitude and direction of motion within the facial regions (eyebrows, \
eyelids, cheeks, mouth, chin) and identify the active facial Action Units (AUs) that \
these localized motion signatures correspond to. Movements unrelated to emotional \
expression, such as eye blinks, may be described but must not be given AU labels.

2) Micro-Expression Inference from Movement Pattern
Integrate the identified AUs with the global and local motion patterns to infer the \
most likely micro-expression category, guided by established AU-emotion mappings.

3) Summary
Write a concise report that lists the recognized AUs, the inferred category and the \
supporting motion evidence. End the summary with a single line of the form
Category: <label>
where <label> is exactly one of: {labels}."""


def build_instruction(task: Task = "three_class", baseline_freeform: bool = False) -> str:
    """Three-step instruction for the task, or the free-form baseline prompt."""
    if task not in TASK_LABELS:
        raise ValueError(f"Unknown task: {task}")
    labels = _label_list(TASK_LABELS[task])
    template = _FREEFORM_TEMPLATE if baseline_freeform else _FGMU_TEMPLATE
    return template.format(labels=labels)
