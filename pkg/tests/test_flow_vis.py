import numpy as np
import pytest
from PIL import Image

from src.core.flow_field import FlowField
from src.core.flow_vis import color_wheel, flow_panel, flow_to_color


def test_wheel_shape():
    wheel = color_wheel()
    assert wheel.shape == (55, 3)
    assert wheel.min() >= 0.0 and wheel.max() <= 1.0


def test_zero_flow_is_white():
    rgb = flow_to_color(FlowField.zeros(6, 4))
    assert rgb.shape == (4, 6, 3) and rgb.dtype == np.uint8
    assert np.all(rgb == 255)


def test_rightward_flow_is_red():
    rgb = flow_to_color(FlowField.constant(3, 3, 1.0, 0.0))
    assert rgb[1, 1].tolist() == [255, 0, 0]


def test_saturation_scales_with_magnitude():
    rgb = flow_to_color(FlowField.constant(3, 3, 1.0, 0.0), max_magnitude=2.0)
    assert rgb[0, 0].tolist() == [255, 128, 128]


def test_magnitude_clamped():
    strong = flow_to_color(FlowField.constant(3, 3, 5.0, 0.0), max_magnitude=1.0)
    assert strong[0, 0].tolist() == [255, 0, 0]


def test_bad_max_magnitude():
    with pytest.raises(ValueError):
        flow_to_color(FlowField.zeros(3, 3), max_magnitude=0.0)


def test_panel(tmp_path):
    flows = [
        ("facial", FlowField.constant(32, 24, 1.0, 0.0)),
        ("expr", FlowField.constant(32, 24, 0.0, -1.0)),
    ]
    path = tmp_path / "panel.png"
    flow_panel(flows, path, max_magnitude=1.0)
    with Image.open(path) as img:
        assert img.format == "PNG"
        assert img.width > img.height
        assert img.size == (640, 340)


def test_panel_leaves_pyplot_state_alone(tmp_path):
    import matplotlib.pyplot as plt

    before = plt.get_fignums()
    flow_panel([("facial", FlowField.constant(32, 24, 1.0, 0.0))], tmp_path / "one.png")
    assert plt.get_fignums() == before
    assert (tmp_path / "one.png").read_bytes()[:4] == b"\x89PNG"


def test_panel_needs_flows(tmp_path):
    with pytest.raises(ValueError):
        flow_panel([], tmp_path / "empty.png")


def test_single_pixel_is_local():
    u = np.zeros((5, 5))
    u[2, 3] = 1.0
    rgb = flow_to_color(FlowField(u, np.zeros((5, 5))), max_magnitude=1.0)
    coloured = np.argwhere(np.any(rgb != 255, axis=2))
    assert coloured.tolist() == [[2, 3]]


def test_self_normalized_rendering_ignores_scale(rng):
    flow = FlowField(rng.normal(size=(12, 10)), rng.normal(size=(12, 10)))
    a = flow_to_color(flow).astype(int)
    b = flow_to_color(flow * 3.0).astype(int)
    assert np.abs(a - b).max() <= 1
