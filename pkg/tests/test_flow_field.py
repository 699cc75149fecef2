import numpy as np
import pytest

from src.core.flow_field import (
    FlowField,
    GrayImage,
    magnitude_angle,
    to_gray,
    vector_angle,
    warp_image,
)
from src.utils.errors import DimensionMismatchError


class TestFlowField:

    def test_mismatched_components(self):
        with pytest.raises(DimensionMismatchError):
            FlowField(np.zeros((4, 5)), np.zeros((5, 4)))

    def test_non_finite_rejected(self):
        u = np.zeros((3, 3))
        u[1, 1] = np.nan
        with pytest.raises(ValueError):
            FlowField(u, np.zeros((3, 3)))

    def test_components_are_read_only(self):
        flow = FlowField.zeros(4, 3)
        with pytest.raises(ValueError):
            flow.u[0, 0] = 1.0

    def test_shape_and_stack(self):
        flow = FlowField.constant(5, 3, 1.5, -2.0)
        assert flow.shape == (3, 5)
        assert flow.width == 5 and flow.height == 3
        stacked = flow.stack()
        assert stacked.shape == (3, 5, 2)
        assert np.all(stacked[..., 0] == 1.5) and np.all(stacked[..., 1] == -2.0)

    def test_arithmetic(self):
        a = FlowField.constant(4, 4, 1.0, 2.0)
        b = FlowField.constant(4, 4, 0.5, -1.0)
        assert (a + b).equals(FlowField.constant(4, 4, 1.5, 1.0))
        assert (a - a).equals(FlowField.zeros(4, 4))
        assert (2.0 * b).equals(FlowField.constant(4, 4, 1.0, -2.0))

    def test_arithmetic_shape_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            FlowField.zeros(4, 4) - FlowField.zeros(5, 4)


class TestGrayImage:

    def test_range_checked(self):
        with pytest.raises(ValueError):
            GrayImage(np.full((2, 2), 1.5))

    def test_to_gray_uint8_rgb(self):
        white = np.full((2, 2, 3), 255, dtype=np.uint8)
        red = np.zeros((2, 2, 3), dtype=np.uint8)
        red[..., 0] = 255
        assert to_gray(white).pixels == pytest.approx(np.ones((2, 2)))
        assert to_gray(red).pixels == pytest.approx(np.full((2, 2), 0.299))

    def test_to_gray_single_channel(self):
        img = to_gray(np.array([[0, 51], [102, 255]], dtype=np.uint8))
        assert img.pixels == pytest.approx(np.array([[0.0, 0.2], [0.4, 1.0]]))


class TestWarp:

    def test_zero_flow_is_identity(self, texture):
        warped = warp_image(texture, FlowField.zeros(texture.width, texture.height))
        assert np.allclose(warped.pixels, texture.pixels, atol=1e-12)

    def test_integer_shift(self, texture):
        warped = warp_image(texture, FlowField.constant(texture.width, texture.height, 1.0, 0.0))
        assert np.allclose(warped.pixels[:, :-1], texture.pixels[:, 1:], atol=1e-12)
        # samples beyond the border clamp to the last column
        assert np.allclose(warped.pixels[:, -1], texture.pixels[:, -1], atol=1e-12)

    def test_matches_scalar_sampler(self, rng):
        height, width = 12, 15
        img = GrayImage(rng.uniform(size=(height, width)))
        ys, xs = np.indices((height, width), dtype=np.float64)
        flow = FlowField(3.0 * np.sin(ys / 4.0 + 0.3), 2.5 * np.cos(xs / 5.0))
        warped = warp_image(img, flow)

        for y in range(height):
            for x in range(width):
                sx = min(max(x + flow.u[y, x], 0.0), width - 1.0)
                sy = min(max(y + flow.v[y, x], 0.0), height - 1.0)
                x0, y0 = int(np.floor(sx)), int(np.floor(sy))
                x1, y1 = min(x0 + 1, width - 1), min(y0 + 1, height - 1)
                ax, ay = sx - x0, sy - y0
                p = img.pixels
                expected = ((1 - ax) * (1 - ay) * p[y0, x0] + ax * (1 - ay) * p[y0, x1]
                            + (1 - ax) * ay * p[y1, x0] + ax * ay * p[y1, x1])
                assert warped.pixels[y, x] == pytest.approx(expected, abs=1e-6)

    def test_shape_mismatch(self, texture):
        with pytest.raises(DimensionMismatchError):
            warp_image(texture, FlowField.zeros(10, 10))


class TestAngles:

    @pytest.mark.parametrize("u, v, expected", [
        (1.0, 0.0, 0.0),
        (0.0, -1.0, 90.0),
        (-1.0, 0.0, 180.0),
        (0.0, 1.0, 270.0),
        (1.0, -1.0, 45.0),
    ])
    def test_convention(self, u, v, expected):
        assert float(vector_angle(u, v)) == pytest.approx(expected)

    def test_zero_vector_angle_is_zero(self):
        assert float(vector_angle(0.0, 0.0)) == 0.0

    def test_never_returns_360(self):
        assert float(vector_angle(1.0, 1e-300)) == 0.0

    def test_magnitude_angle(self):
        flow = FlowField(np.array([[3.0, 0.0]]), np.array([[4.0, 0.0]]))
        magnitude, angle = magnitude_angle(flow)
        assert magnitude.tolist() == [[5.0, 0.0]]
        assert angle[0, 1] == 0.0
        assert 0.0 <= angle[0, 0] < 360.0
