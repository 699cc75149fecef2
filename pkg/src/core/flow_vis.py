from pathlib import Path

import numpy as np
from matplotlib.figure import Figure

from src.core.flow_field import FlowField, magnitude_angle

# Colour coding follows the Middlebury flow colour wheel (Baker et al.), with the
# hue index driven by our angle convention (0° = right, 90° = up).

NORMALIZE_PERCENTILE = 99.0
_COLORWHEEL = None


def color_wheel() -> np.ndarray:
    """(55, 3) RGB wheel in [0, 1]; steps chosen for perceptual similarity."""
    global _COLORWHEEL
    if _COLORWHEEL is not None:
        return _COLORWHEEL

    RY, YG, GC, CB, BM, MR = 15, 6, 4, 11, 13, 6
    wheel = np.zeros((RY + YG + GC + CB + BM + MR, 3))

    i = 0
    wheel[i:i + RY, 0] = 1.0
    wheel[i:i + RY, 1] = np.arange(RY) / RY
    i += RY
    wheel[i:i + YG, 0] = 1.0 - np.arange(YG) / YG
    wheel[i:i + YG, 1] = 1.0
    i += YG
    wheel[i:i + GC, 1] = 1.0
    wheel[i:i + GC, 2] = np.arange(GC) / GC
    i += GC
    wheel[i:i + CB, 1] = 1.0 - np.arange(CB) / CB
    wheel[i:i + CB, 2] = 1.0
    i += CB
    wheel[i:i + BM, 0] = np.arange(BM) / BM
    wheel[i:i + BM, 2] = 1.0
    i += BM
    wheel[i:i + MR, 0] = 1.0
    wheel[i:i + MR, 2] = 1.0 - np.arange(MR) / MR

    _COLORWHEEL = wheel
    return wheel


def normalization_magnitude(flow: FlowField) -> float:
    """99th-percentile magnitude, falling back to the maximum when that is zero."""
    magnitude, _ = magnitude_angle(flow)
    value = float(np.percentile(magnitude, NORMALIZE_PERCENTILE))
    if value <= 0.0:
        value = float(magnitude.max())
    return value


def flow_to_color(flow: FlowField, max_magnitude: float | None = None) -> np.ndarray:
    """
    Render a flow as a uint8 (height, width, 3) RGB image.

    Hue encodes the angle, saturation the magnitude relative to max_magnitude
    (clamped to 1). Zero motion is white.
    """
    if max_magnitude is not None and max_magnitude <= 0:
        raise ValueError("max_magnitude must be positive")

    magnitude, angle = magnitude_angle(flow)
    if max_magnitude is None:
        max_magnitude = normalization_magnitude(flow)
    if max_magnitude <= 0.0:
        return np.full(flow.shape + (3,), 255, dtype=np.uint8)

    wheel = color_wheel()
    ncols = wheel.shape[0]

    position = angle / 360.0 * ncols
    k0 = np.floor(position).astype(np.int64) % ncols
    k1 = (k0 + 1) % ncols
    alpha = (position - np.floor(position))[..., None]
    color = (1.0 - alpha) * wheel[k0] + alpha * wheel[k1]

    radius = np.clip(magnitude / max_magnitude, 0.0, 1.0)[..., None]
    color = 1.0 - radius * (1.0 - color)
    return np.round(color * 255.0).astype(np.uint8)


def flow_panel(flows: list[tuple[str, FlowField]], path: str | Path, max_magnitude: float | None = None) -> None:
    """
    Side-by-side colour renderings of several flows, one titled axis each.
    A shared max_magnitude makes the panels directly comparable.
    """
    if not flows:
        raise ValueError("flow_panel needs at least one flow")

    # no pyplot: savefig renders through the Agg canvas
    fig = Figure(figsize=(3.2 * len(flows), 3.4))
    axes = fig.subplots(1, len(flows), squeeze=False)
    for ax, (title, flow) in zip(axes[0], flows):
        ax.imshow(flow_to_color(flow, max_magnitude))
        ax.set_title(title, fontsize=9)
        ax.set_axis_off()

    fig.tight_layout()
    fig.savefig(path, format="png", dpi=100, metadata={"Software": None})
