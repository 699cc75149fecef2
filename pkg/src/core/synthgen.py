"""
Synthetic onset/apex pairs with analytic ground-truth flows.

A 2D analog of mesh-based micro-expression synthesis: rigid head motion is a
near-identity affine map, expression motion a sum of Gaussian bumps placed on
facial regions. Scale increments follow the onset/apex sampling scheme
(85% of expression increments below 0.1, 95% of pose increments below 0.03).
"""
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage as ndi

from src.core.fgmu import NASAL_TIP, REGION_NAMES, frontal_landmarks, region_anchor
from src.core.flow_field import FlowField, GrayImage, warp_array
from src.core.flow_io import load_flo, read_image, save_flo, write_image
from src.core.params import SynthConfig
from src.utils.errors import ImageTooSmallError, InvalidConfigError
from src.utils.logging import get_logger

logger = get_logger(__name__)

MIN_TEXTURE_SIZE = 64

ONSET_SCALE_RANGE = (0.0, 0.3)
EXPR_INCREMENT_RANGE = (0.03, 0.25)
EXPR_INCREMENT_SPLIT = 0.1
EXPR_BELOW_SPLIT = 0.85
POSE_INCREMENT_RANGE = (0.0, 0.1)
POSE_INCREMENT_SPLIT = 0.03
POSE_BELOW_SPLIT = 0.95

# bumps land on regions that carry action units; the nasal tip stays rigid
BUMP_REGIONS = tuple(name for name in REGION_NAMES if name != NASAL_TIP)

# ground-truth components snap to this grid so facial = head + expr stays exact in float32
FLOW_QUANTUM = 2.0 ** -16


@dataclass(frozen=True)
class ExpressionBump:
    center: tuple[float, float]
    sigma: float
    direction: tuple[float, float]
    peak_amplitude: float

    def __post_init__(self):
        if self.sigma <= 0:
            raise InvalidConfigError("Bump sigma must be positive")
        if abs(np.hypot(*self.direction) - 1.0) > 1e-9:
            raise InvalidConfigError(f"Bump direction {self.direction} is not a unit vector")
        if self.peak_amplitude < 0:
            raise InvalidConfigError("Bump amplitude must be non-negative")


@dataclass(frozen=True)
class MotionParams:
    head_affine: tuple[tuple[float, float, float], tuple[float, float, float]]
    bumps: tuple[ExpressionBump, ...]
    onset_expr_scale: float
    apex_expr_scale: float
    onset_pose_scale: float
    apex_pose_scale: float

    @property
    def expr_increment(self) -> float:
        return self.apex_expr_scale - self.onset_expr_scale

    @property
    def pose_increment(self) -> float:
        return self.apex_pose_scale - self.onset_pose_scale

    def to_dict(self) -> dict:
        return {
            "head_affine": [list(row) for row in self.head_affine],
            "bumps": [
                {
                    "center": list(b.center),
                    "sigma": b.sigma,
                    "direction": list(b.direction),
                    "peak_amplitude": b.peak_amplitude,
                }
                for b in self.bumps
            ],
            "onset_expr_scale": self.onset_expr_scale,
            "apex_expr_scale": self.apex_expr_scale,
            "onset_pose_scale": self.onset_pose_scale,
            "apex_pose_scale": self.apex_pose_scale,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MotionParams":
        return cls(
            head_affine=tuple(tuple(float(x) for x in row) for row in data["head_affine"]),
            bumps=tuple(
                ExpressionBump(
                    center=tuple(b["center"]),
                    sigma=b["sigma"],
                    direction=tuple(b["direction"]),
                    peak_amplitude=b["peak_amplitude"],
                )
                for b in data["bumps"]
            ),
            onset_expr_scale=data["onset_expr_scale"],
            apex_expr_scale=data["apex_expr_scale"],
            onset_pose_scale=data["onset_pose_scale"],
            apex_pose_scale=data["apex_pose_scale"],
        )


IDENTITY_AFFINE = ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0))


@dataclass(frozen=True, eq=False)
class SyntheticSample:
    onset: GrayImage
    apex: GrayImage
    f_facial_gt: FlowField
    f_head_gt: FlowField
    f_expr_gt: FlowField
    params: MotionParams
    seed: int
    config: SynthConfig = field(default_factory=SynthConfig)


def _split_uniform(rng: np.random.Generator, low: float, split: float, high: float, p_below: float) -> float:
    """Uniform on [low, split) with probability p_below, else uniform on [split, high]."""
    if rng.random() < p_below:
        return float(rng.uniform(low, split))
    return float(rng.uniform(split, high))


def _head_affine(rng: np.random.Generator, width: int, height: int, corner_max: float):
    """Near-identity affine whose displacement at the image corners is at most corner_max."""
    deviation = rng.normal(0.0, 1.0, size=(2, 3))
    deviation[:, :2] /= max(width, height)
    corners = np.array([[0, 0, 1], [width - 1, 0, 1], [0, height - 1, 1], [width - 1, height - 1, 1]], float)
    peak = np.hypot(*(deviation @ corners.T)).max()
    if peak > 0:
        deviation *= corner_max * rng.uniform(0.0, 1.0) / peak
    affine = np.array(IDENTITY_AFFINE) + deviation
    return tuple(tuple(float(x) for x in row) for row in affine)


def sample_motion_params(seed: int, config: SynthConfig | None = None) -> MotionParams:
    """
    Draw scales, head affine and expression bumps for one sample. Deterministic per seed.

    Bump amplitudes are scaled down when the worst-case displacement bound
    exceeds config.max_displacement.
    """
    config = config or SynthConfig()
    if config.bump_count_min > config.bump_count_max:
        raise InvalidConfigError("bump_count_min must not exceed bump_count_max")

    rng = np.random.default_rng(seed)

    onset_expr = float(rng.uniform(*ONSET_SCALE_RANGE))
    onset_pose = float(rng.uniform(*ONSET_SCALE_RANGE))
    expr_increment = _split_uniform(rng, EXPR_INCREMENT_RANGE[0], EXPR_INCREMENT_SPLIT,
                                    EXPR_INCREMENT_RANGE[1], EXPR_BELOW_SPLIT)
    pose_increment = _split_uniform(rng, POSE_INCREMENT_RANGE[0], POSE_INCREMENT_SPLIT,
                                    POSE_INCREMENT_RANGE[1], POSE_BELOW_SPLIT)

    head_affine = _head_affine(rng, config.width, config.height, config.head_corner_max)

    landmarks = frontal_landmarks(config.width, config.height)
    jitter = 0.05 * landmarks.inter_ocular_distance()
    count = int(rng.integers(config.bump_count_min, config.bump_count_max + 1))

    bumps = []
    for _ in range(count):
        region = BUMP_REGIONS[int(rng.integers(len(BUMP_REGIONS)))]
        cx, cy = region_anchor(landmarks, region)
        theta = float(rng.uniform(0.0, 2.0 * np.pi))
        bumps.append(ExpressionBump(
            center=(float(cx + rng.normal(0.0, jitter)), float(cy + rng.normal(0.0, jitter))),
            sigma=float(rng.uniform(config.sigma_min, config.sigma_max)),
            direction=(float(np.cos(theta)), float(np.sin(theta))),
            peak_amplitude=float(rng.uniform(config.amplitude_min, config.amplitude_max)),
        ))

    head_bound = pose_increment * config.head_corner_max
    expr_bound = expr_increment * sum(b.peak_amplitude for b in bumps)
    if head_bound + expr_bound > config.max_displacement and expr_bound > 0:
        shrink = max(config.max_displacement - head_bound, 0.0) / expr_bound
        bumps = [
            ExpressionBump(b.center, b.sigma, b.direction, b.peak_amplitude * shrink)
            for b in bumps
        ]

    return MotionParams(
        head_affine=head_affine,
        bumps=tuple(bumps),
        onset_expr_scale=onset_expr,
        apex_expr_scale=onset_expr + expr_increment,
        onset_pose_scale=onset_pose,
        apex_pose_scale=onset_pose + pose_increment,
    )


def _snap(component: np.ndarray) -> np.ndarray:
    return np.round(component / FLOW_QUANTUM) * FLOW_QUANTUM


def compose_gt_flows(params: MotionParams, width: int, height: int) -> tuple[FlowField, FlowField, FlowField]:
    """
    Analytic (facial, head, expression) flows.

    Head and expression components are snapped to FLOW_QUANTUM, so facial,
    head and facial − head are all exact float32 values and the decomposition
    identity survives a .flo round trip bitwise.
    """
    ys, xs = np.indices((height, width), dtype=np.float64)
    a = np.asarray(params.head_affine)

    pose = params.pose_increment
    head_u = pose * (a[0, 0] * xs + a[0, 1] * ys + a[0, 2] - xs)
    head_v = pose * (a[1, 0] * xs + a[1, 1] * ys + a[1, 2] - ys)

    expr_u = np.zeros((height, width))
    expr_v = np.zeros((height, width))
    for bump in params.bumps:
        cx, cy = bump.center
        weight = bump.peak_amplitude * np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2.0 * bump.sigma ** 2))
        expr_u += weight * bump.direction[0]
        expr_v += weight * bump.direction[1]
    expr_u *= params.expr_increment
    expr_v *= params.expr_increment

    head_u, head_v, expr_u, expr_v = (_snap(c) for c in (head_u, head_v, expr_u, expr_v))
    facial_u = head_u + expr_u
    facial_v = head_v + expr_v

    f_facial = FlowField(facial_u, facial_v)
    f_head = FlowField(head_u, head_v)
    return f_facial, f_head, f_facial - f_head


def base_texture(seed: int, width: int, height: int) -> GrayImage:
    """
    Smooth band-limited noise plus soft high-contrast blobs and bars,
    normalized to [0.02, 0.98]. Deterministic per seed.
    """
    if width < MIN_TEXTURE_SIZE or height < MIN_TEXTURE_SIZE:
        raise ImageTooSmallError(f"Texture needs at least {MIN_TEXTURE_SIZE}x{MIN_TEXTURE_SIZE}, got {width}x{height}")

    rng = np.random.default_rng(seed)
    coarse = ndi.gaussian_filter(rng.normal(size=(height, width)), 6.0, mode="wrap")
    fine = ndi.gaussian_filter(rng.normal(size=(height, width)), 1.5, mode="wrap")
    texture = coarse / coarse.std() + 0.5 * fine / fine.std()

    ys, xs = np.indices((height, width), dtype=np.float64)
    structure = np.zeros((height, width))
    for _ in range(int(rng.integers(6, 12))):
        cx, cy = rng.uniform(0, width), rng.uniform(0, height)
        radius = rng.uniform(3.0, 0.12 * min(width, height))
        structure += rng.choice([-1.0, 1.0]) * ((xs - cx) ** 2 + (ys - cy) ** 2 <= radius ** 2)
    for _ in range(int(rng.integers(2, 5))):
        angle = rng.uniform(0, np.pi)
        offset = rng.uniform(-0.3, 0.3) * min(width, height)
        distance = (xs - width / 2) * np.cos(angle) + (ys - height / 2) * np.sin(angle) - offset
        structure += rng.choice([-1.0, 1.0]) * (np.abs(distance) < rng.uniform(2.0, 5.0))
    texture += 1.5 * ndi.gaussian_filter(structure, 1.0)

    low, high = texture.min(), texture.max()
    return GrayImage(0.02 + 0.96 * (texture - low) / (high - low))


def invert_flow(flow: FlowField, iterations: int) -> tuple[np.ndarray, np.ndarray]:
    """
    Fixed-point inverse g of the backward mapping: g(y) = −f(y + g(y)),
    so that x + f(x) = y exactly when y + g(y) = x.
    """
    gu = -flow.u.copy()
    gv = -flow.v.copy()
    for _ in range(iterations):
        gu, gv = -warp_array(flow.u, gu, gv), -warp_array(flow.v, gu, gv)
    return gu, gv


class SyntheticGenerator:
    """
    Usage:
        generator = SyntheticGenerator(SynthConfig(width=128, height=128))
        sample = generator.generate(seed=7)
    """

    def __init__(self, config: SynthConfig | None = None):
        self.config = config or SynthConfig()

    def generate(self, seed: int) -> SyntheticSample:
        return self.from_params(seed, sample_motion_params(seed, self.config))

    def from_params(self, seed: int, params: MotionParams) -> SyntheticSample:
        """
        Render a sample for given motion: apex(y) = onset(y + g(y)) with g the
        inverse of the facial flow, so warp_image(apex, f_facial) ≈ onset.
        """
        width, height = self.config.width, self.config.height
        onset = base_texture(seed, width, height)
        f_facial, f_head, f_expr = compose_gt_flows(params, width, height)

        if not (f_facial.u.any() or f_facial.v.any()):
            apex = onset
        else:
            gu, gv = invert_flow(f_facial, self.config.inverse_iterations)
            apex = GrayImage(np.clip(warp_array(onset.pixels, gu, gv), 0.0, 1.0))

        logger.debug(
            "sample seed=%d: %d bumps, Δs_e=%.3f Δs_p=%.3f, max |f| %.3f px",
            seed, len(params.bumps), params.expr_increment, params.pose_increment,
            float(np.hypot(f_facial.u, f_facial.v).max()),
        )
        return SyntheticSample(onset, apex, f_facial, f_head, f_expr, params, seed, self.config)


def generate_sample(seed: int, config: SynthConfig | None = None) -> SyntheticSample:
    return SyntheticGenerator(config).generate(seed)


SAMPLE_FILES = {
    "onset": "onset.png",
    "apex": "apex.png",
    "facial": "facial.flo",
    "head": "head.flo",
    "expr": "expr.flo",
    "landmarks": "landmarks.txt",
    "params": "params.json",
}


def write_sample(sample: SyntheticSample, directory: str | Path) -> Path:
    """Emit images, the three flows, template landmarks and a JSON sidecar."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    write_image(directory / SAMPLE_FILES["onset"], sample.onset)
    write_image(directory / SAMPLE_FILES["apex"], sample.apex)
    save_flo(directory / SAMPLE_FILES["facial"], sample.f_facial_gt)
    save_flo(directory / SAMPLE_FILES["head"], sample.f_head_gt)
    save_flo(directory / SAMPLE_FILES["expr"], sample.f_expr_gt)

    landmarks = frontal_landmarks(sample.config.width, sample.config.height)
    (directory / SAMPLE_FILES["landmarks"]).write_text(landmarks.to_text(), encoding="utf-8")

    sidecar = {
        "seed": sample.seed,
        "config": sample.config.model_dump(),
        "params": sample.params.to_dict(),
    }
    (directory / SAMPLE_FILES["params"]).write_text(
        json.dumps(sidecar, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return directory


def load_sample(directory: str | Path) -> SyntheticSample:
    """Read a sample directory back (images as stored, i.e. 8-bit quantized)."""
    directory = Path(directory)
    sidecar = json.loads((directory / SAMPLE_FILES["params"]).read_text(encoding="utf-8"))
    return SyntheticSample(
        onset=read_image(directory / SAMPLE_FILES["onset"]),
        apex=read_image(directory / SAMPLE_FILES["apex"]),
        f_facial_gt=load_flo(directory / SAMPLE_FILES["facial"]),
        f_head_gt=load_flo(directory / SAMPLE_FILES["head"]),
        f_expr_gt=load_flo(directory / SAMPLE_FILES["expr"]),
        params=MotionParams.from_dict(sidecar["params"]),
        seed=sidecar["seed"],
        config=SynthConfig(**sidecar["config"]),
    )


def list_sample_dirs(root: str | Path, required: str = SAMPLE_FILES["params"]) -> list[Path]:
    """Sample directories below root (sorted by name) that contain `required`."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"Sample tree not found: {root}")
    return sorted(p for p in root.iterdir() if p.is_dir() and (p / required).is_file())


def sample_dir_name(index: int) -> str:
    return f"sample_{index:04d}"
