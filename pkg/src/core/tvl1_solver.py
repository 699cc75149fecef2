from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage as ndi

from src.core.flow_field import (
    FlowField,
    GrayImage,
    check_same_shape,
    sample_bilinear,
    warp_array,
)
from src.core.params import TvL1Params
from src.utils.errors import ImageTooSmallError
from src.utils.logging import get_logger

logger = get_logger(__name__)

MIN_IMAGE_SIZE = 16
MIN_COARSE_SIZE = 8
INTENSITY_RANGE = 255.0
MEDIAN_SIZE = 5
GRADIENT_EPS = 1e-10


@dataclass
class FlowResult:
    """Estimated flow plus the accepted energy after every warp, per level (coarse first)."""
    flow: FlowField
    energies: list[list[float]] = field(default_factory=list)
    level_shapes: list[tuple[int, int]] = field(default_factory=list)

    @property
    def finest_energies(self) -> list[float]:
        return self.energies[-1] if self.energies else []


def central_gradient(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Central differences with border replication."""
    padded = np.pad(img, 1, mode="edge")
    gx = 0.5 * (padded[1:-1, 2:] - padded[1:-1, :-2])
    gy = 0.5 * (padded[2:, 1:-1] - padded[:-2, 1:-1])
    return gx, gy


def forward_gradient(f: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    fx = np.zeros_like(f)
    fy = np.zeros_like(f)
    fx[:, :-1] = f[:, 1:] - f[:, :-1]
    fy[:-1, :] = f[1:, :] - f[:-1, :]
    return fx, fy


def divergence(p1: np.ndarray, p2: np.ndarray) -> np.ndarray:
    """Backward-difference divergence, the negative adjoint of forward_gradient."""
    d1 = np.zeros_like(p1)
    d1[:, 0] = p1[:, 0]
    d1[:, 1:-1] = p1[:, 1:-1] - p1[:, :-2]
    d1[:, -1] = -p1[:, -2]

    d2 = np.zeros_like(p2)
    d2[0, :] = p2[0, :]
    d2[1:-1, :] = p2[1:-1, :] - p2[:-2, :]
    d2[-1, :] = -p2[-2, :]
    return d1 + d2


def _resample(array: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Pixel-centre aligned bilinear resampling to `shape`."""
    h_in, w_in = array.shape
    h_out, w_out = shape
    ys = (np.arange(h_out) + 0.5) * (h_in / h_out) - 0.5
    xs = (np.arange(w_out) + 0.5) * (w_in / w_out) - 0.5
    grid_y, grid_x = np.meshgrid(ys, xs, indexing="ij")
    return sample_bilinear(array, grid_x, grid_y)


def _downsample(img: np.ndarray, scale: float, shape: tuple[int, int]) -> np.ndarray:
    sigma = 0.6 * np.sqrt(1.0 / scale ** 2 - 1.0)
    return _resample(ndi.gaussian_filter(img, sigma, mode="nearest"), shape)


def _energy(i0: np.ndarray, i1: np.ndarray, u1: np.ndarray, u2: np.ndarray, data_weight: float) -> float:
    data = np.abs(warp_array(i1, u1, u2) - i0).sum()
    u1x, u1y = forward_gradient(u1)
    u2x, u2y = forward_gradient(u2)
    tv = np.sqrt(u1x ** 2 + u1y ** 2).sum() + np.sqrt(u2x ** 2 + u2y ** 2).sum()
    return float(data_weight * data + tv)


def tvl1_energy(onset: GrayImage, apex: GrayImage, flow: FlowField, data_weight: float = 0.15) -> float:
    """
    TV-L1 energy λ·Σ|apex(x + f) − onset(x)| + Σ(|∇u| + |∇v|),
    intensities scaled to [0, 255] as inside the solver.
    """
    check_same_shape(onset, apex)
    check_same_shape(onset, flow)
    return _energy(
        onset.pixels * INTENSITY_RANGE,
        apex.pixels * INTENSITY_RANGE,
        flow.u,
        flow.v,
        data_weight,
    )


class TVL1Solver:
    """
    Coarse-to-fine primal-dual TV-L1 optical flow.

    Usage:
        solver = TVL1Solver(TvL1Params())
        result = solver.estimate(onset, apex)
        flow = result.flow   # warp_image(apex, flow) ≈ onset
    """

    def __init__(self, params: TvL1Params | None = None):
        self.params = params or TvL1Params()

    def pyramid_shapes(self, height: int, width: int) -> list[tuple[int, int]]:
        """
        Level shapes, finest first. A coarser level is added only while
        pyramid_scale × min(level size) stays ≥ 8.
        """
        if min(height, width) < MIN_IMAGE_SIZE:
            raise ImageTooSmallError(
                f"Image {width}x{height} is smaller than the minimum pyramid base {MIN_IMAGE_SIZE}px"
            )
        scale = self.params.pyramid_scale
        shapes = [(height, width)]
        while len(shapes) < self.params.pyramid_levels:
            h, w = shapes[-1]
            nxt = (int(round(h * scale)), int(round(w * scale)))
            if scale * min(nxt) < MIN_COARSE_SIZE:
                break
            shapes.append(nxt)
        return shapes

    def estimate(self, onset: GrayImage, apex: GrayImage) -> FlowResult:
        """
        Estimate the flow f such that apex(x + f(x)) ≈ onset(x).

        Raises:
            DimensionMismatchError: images differ in size
            ImageTooSmallError: min dimension below 16 px
        """
        check_same_shape(onset, apex)
        shapes = self.pyramid_shapes(onset.height, onset.width)
        scale = self.params.pyramid_scale

        i0_levels = [onset.pixels * INTENSITY_RANGE]
        i1_levels = [apex.pixels * INTENSITY_RANGE]
        for shape in shapes[1:]:
            i0_levels.append(_downsample(i0_levels[-1], scale, shape))
            i1_levels.append(_downsample(i1_levels[-1], scale, shape))

        logger.info(
            "TV-L1 on %dx%d, %d levels (λ=%.3f θ=%.3f τ=%.3f)",
            onset.width, onset.height, len(shapes),
            self.params.data_weight, self.params.tightness, self.params.time_step,
        )

        u1 = np.zeros(shapes[-1])
        u2 = np.zeros(shapes[-1])
        energies: list[list[float]] = []

        for level in range(len(shapes) - 1, -1, -1):
            if level < len(shapes) - 1:
                h_c, w_c = u1.shape
                h_f, w_f = shapes[level]
                u1 = _resample(u1, shapes[level]) * (w_f / w_c)
                u2 = _resample(u2, shapes[level]) * (h_f / h_c)

            u1, u2, level_energies = self._solve_level(i0_levels[level], i1_levels[level], u1, u2)
            energies.append(level_energies)
            logger.debug(
                "  level %d (%dx%d): energy %.4f -> %.4f",
                level, shapes[level][1], shapes[level][0], level_energies[0], level_energies[-1],
            )

        logger.info("TV-L1 complete, final energy %.4f", energies[-1][-1])
        return FlowResult(
            flow=FlowField(u1, u2),
            energies=energies,
            level_shapes=list(reversed(shapes)),
        )

    def _solve_level(
        self,
        i0: np.ndarray,
        i1: np.ndarray,
        u1: np.ndarray,
        u2: np.ndarray,
    ) -> tuple[np.ndarray, np.ndarray, list[float]]:
        lam = self.params.data_weight
        theta = self.params.tightness
        tau = self.params.time_step
        lt = lam * theta
        taut = tau / theta

        i1x, i1y = central_gradient(i1)

        p11 = np.zeros_like(u1)
        p12 = np.zeros_like(u1)
        p21 = np.zeros_like(u1)
        p22 = np.zeros_like(u1)

        energies = [_energy(i0, i1, u1, u2, lam)]

        for warp in range(self.params.warps_per_level):
            i1w = warp_array(i1, u1, u2)
            i1wx = warp_array(i1x, u1, u2)
            i1wy = warp_array(i1y, u1, u2)

            grad = i1wx ** 2 + i1wy ** 2
            rho_c = i1w - i1wx * u1 - i1wy * u2 - i0

            n1, n2 = u1.copy(), u2.copy()
            for _ in range(self.params.inner_iterations):
                rho = rho_c + i1wx * n1 + i1wy * n2

                below = rho < -lt * grad
                above = rho > lt * grad
                inside = ~(below | above) & (grad > GRADIENT_EPS)

                step = np.zeros_like(rho)
                step[below] = lt
                step[above] = -lt
                step[inside] = -rho[inside] / grad[inside]

                v1 = n1 + step * i1wx
                v2 = n2 + step * i1wy

                n1 = v1 + theta * divergence(p11, p12)
                n2 = v2 + theta * divergence(p21, p22)

                n1x, n1y = forward_gradient(n1)
                n2x, n2y = forward_gradient(n2)
                ng1 = 1.0 + taut * np.sqrt(n1x ** 2 + n1y ** 2)
                ng2 = 1.0 + taut * np.sqrt(n2x ** 2 + n2y ** 2)
                p11 = (p11 + taut * n1x) / ng1
                p12 = (p12 + taut * n1y) / ng1
                p21 = (p21 + taut * n2x) / ng2
                p22 = (p22 + taut * n2y) / ng2

            if self.params.median_filter:
                n1 = ndi.median_filter(n1, size=MEDIAN_SIZE, mode="nearest")
                n2 = ndi.median_filter(n2, size=MEDIAN_SIZE, mode="nearest")

            energy = _energy(i0, i1, n1, n2, lam)
            if energy > energies[-1]:
                logger.debug("    warp %d rejected (energy %.4f > %.4f)", warp, energy, energies[-1])
                break

            u1, u2 = n1, n2
            energies.append(energy)

        return u1, u2, energies


def estimate_flow_tvl1(onset: GrayImage, apex: GrayImage, params: TvL1Params | None = None) -> FlowField:
    """Dense onset→apex flow with the built-in TV-L1 solver."""
    return TVL1Solver(params).estimate(onset, apex).flow
