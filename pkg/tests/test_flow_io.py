import struct

import numpy as np
import pytest
from PIL import Image

from src.core.flow_field import FlowField, GrayImage
from src.core.flow_io import (
    load_flo,
    read_flo,
    read_image,
    save_flo,
    to_uint8,
    write_flo,
    write_image,
    write_rgb,
)
from src.utils.errors import FloFormatError


def float32_flow(rng, width=7, height=5) -> FlowField:
    u = rng.normal(scale=3.0, size=(height, width)).astype(np.float32).astype(np.float64)
    v = rng.normal(scale=3.0, size=(height, width)).astype(np.float32).astype(np.float64)
    return FlowField(u, v)


class TestFlo:

    def test_layout(self, rng):
        flow = float32_flow(rng)
        buffer = write_flo(flow)
        assert buffer[:4] == b"PIEH"
        assert struct.unpack_from("<ii", buffer, 4) == (7, 5)
        assert len(buffer) == 12 + 8 * 7 * 5
        # interleaved (u, v) pairs, row-major
        first = struct.unpack_from("<ff", buffer, 12)
        assert first == (flow.u[0, 0], flow.v[0, 0])

    def test_bitwise_roundtrip(self, rng):
        flow = float32_flow(rng)
        assert read_flo(write_flo(flow)).equals(flow)

    def test_file_roundtrip(self, rng, tmp_path):
        flow = float32_flow(rng)
        save_flo(tmp_path / "f.flo", flow)
        assert load_flo(tmp_path / "f.flo").equals(flow)

    def test_bad_magic(self, rng):
        buffer = bytearray(write_flo(float32_flow(rng)))
        buffer[:4] = struct.pack("<f", 1.0)
        with pytest.raises(FloFormatError):
            read_flo(bytes(buffer))

    def test_truncated_header(self):
        with pytest.raises(FloFormatError):
            read_flo(b"PIEH\x01\x00")

    def test_truncated_payload(self, rng):
        buffer = write_flo(float32_flow(rng))
        with pytest.raises(FloFormatError):
            read_flo(buffer[:-4])

    def test_non_positive_dimensions(self):
        with pytest.raises(FloFormatError):
            read_flo(struct.pack("<fii", 202021.25, 0, 3))

    def test_non_finite_payload(self):
        buffer = struct.pack("<fii", 202021.25, 1, 1) + struct.pack("<ff", float("nan"), 0.0)
        with pytest.raises(FloFormatError):
            read_flo(buffer)

    def test_float32_overflow(self):
        with pytest.raises(FloFormatError):
            write_flo(FlowField.constant(2, 2, 1e39, 0.0))


class TestImages:

    def test_gray_png_roundtrip(self, tmp_path):
        img = GrayImage(np.arange(256, dtype=np.float64).reshape(16, 16) / 255.0)
        write_image(tmp_path / "g.png", img)
        back = read_image(tmp_path / "g.png")
        assert np.array_equal(back.pixels, img.pixels)
        assert np.array_equal(to_uint8(back), np.arange(256, dtype=np.uint8).reshape(16, 16))

    def test_rgb_png_uses_luma(self, tmp_path):
        rgb = np.zeros((4, 4, 3), dtype=np.uint8)
        rgb[..., 1] = 255
        write_rgb(tmp_path / "c.png", rgb)
        with Image.open(tmp_path / "c.png") as img:
            assert img.mode == "RGB"
        assert read_image(tmp_path / "c.png").pixels == pytest.approx(np.full((4, 4), 0.587))


def test_single_pixel_flo():
    buffer = write_flo(FlowField.constant(1, 1, 3.0, 4.0))
    assert len(buffer) == 20
    assert read_flo(buffer).equals(FlowField.constant(1, 1, 3.0, 4.0))
