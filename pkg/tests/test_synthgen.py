import json

import numpy as np
import pytest
from pydantic import ValidationError

from src.core.flow_field import FlowField, warp_array, warp_image
from src.core.params import SynthConfig
from src.core.synthgen import (
    FLOW_QUANTUM,
    IDENTITY_AFFINE,
    SAMPLE_FILES,
    ExpressionBump,
    MotionParams,
    SyntheticGenerator,
    base_texture,
    compose_gt_flows,
    generate_sample,
    invert_flow,
    list_sample_dirs,
    load_sample,
    sample_motion_params,
    write_sample,
)
from src.utils.errors import ImageTooSmallError, InvalidConfigError


class TestDecomposition:

    def test_identity_is_bitwise(self, small_config):
        for seed in range(40):
            sample = generate_sample(seed, small_config)
            assert sample.f_expr_gt.equals(sample.f_facial_gt - sample.f_head_gt)

    def test_zero_motion_gives_identical_frames(self, small_config):
        params = MotionParams(IDENTITY_AFFINE, (), 0.1, 0.1, 0.2, 0.2)
        sample = SyntheticGenerator(small_config).from_params(5, params)
        assert np.array_equal(sample.apex.pixels, sample.onset.pixels)
        assert not sample.f_facial_gt.u.any() and not sample.f_facial_gt.v.any()

    def test_displacement_cap(self, small_config):
        for seed in range(100):
            sample = generate_sample(seed, small_config)
            magnitude = np.hypot(sample.f_facial_gt.u, sample.f_facial_gt.v)
            assert magnitude.max() <= small_config.max_displacement + 1e-9


class TestSampling:

    def test_deterministic_per_seed(self, small_config):
        a = generate_sample(11, small_config)
        b = generate_sample(11, small_config)
        assert a.params == b.params
        assert np.array_equal(a.onset.pixels, b.onset.pixels)
        assert np.array_equal(a.apex.pixels, b.apex.pixels)
        assert a.f_facial_gt.equals(b.f_facial_gt)

    def test_seeds_differ(self, small_config):
        assert sample_motion_params(1, small_config) != sample_motion_params(2, small_config)

    def test_increment_distributions(self):
        config = SynthConfig()
        n = 10_000
        expr_below = pose_below = 0
        for seed in range(n):
            params = sample_motion_params(seed, config)
            assert 0.03 - 1e-12 <= params.expr_increment <= 0.25 + 1e-12
            assert -1e-12 <= params.pose_increment <= 0.1 + 1e-12
            assert 0.0 <= params.onset_expr_scale <= 0.3
            expr_below += params.expr_increment < 0.1
            pose_below += params.pose_increment < 0.03
        assert 0.83 <= expr_below / n <= 0.87
        assert 0.93 <= pose_below / n <= 0.97

    def test_bump_count_within_range(self):
        config = SynthConfig(bump_count_min=3, bump_count_max=3)
        assert len(sample_motion_params(4, config).bumps) == 3

    def test_invalid_ranges(self):
        with pytest.raises(ValidationError):
            SynthConfig(amplitude_min=5.0, amplitude_max=1.0)
        with pytest.raises(ValidationError):
            SynthConfig(width=32)

    def test_bump_validation(self):
        with pytest.raises(InvalidConfigError):
            ExpressionBump(center=(1.0, 1.0), sigma=2.0, direction=(1.0, 1.0), peak_amplitude=1.0)


class TestRendering:

    def test_texture_range(self):
        texture = base_texture(0, 64, 80)
        assert texture.shape == (80, 64)
        assert texture.pixels.min() == pytest.approx(0.02)
        assert texture.pixels.max() == pytest.approx(0.98)

    def test_texture_too_small(self):
        with pytest.raises(ImageTooSmallError):
            base_texture(0, 32, 64)

    def test_inverse_flow(self):
        bump = ExpressionBump(center=(32.0, 32.0), sigma=8.0, direction=(0.6, 0.8), peak_amplitude=2.0)
        params = MotionParams(IDENTITY_AFFINE, (bump,), 0.0, 1.0, 0.0, 0.0)
        facial, _, _ = compose_gt_flows(params, 64, 64)
        gu, gv = invert_flow(facial, 12)
        # y = x + f(x) must map back: g(x + f(x)) = -f(x)
        back_u = warp_array(gu, facial.u, facial.v)
        back_v = warp_array(gv, facial.u, facial.v)
        assert np.abs(back_u + facial.u).max() < 0.02
        assert np.abs(back_v + facial.v).max() < 0.02

    def test_head_flow_is_affine(self):
        affine = ((1.01, 0.0, 0.5), (0.0, 0.99, -0.25))
        params = MotionParams(affine, (), 0.0, 0.0, 0.1, 0.6)
        facial, head, expr = compose_gt_flows(params, 64, 64)
        assert head.u[0, 0] == pytest.approx(0.5 * 0.5)
        assert head.v[0, 0] == pytest.approx(0.5 * -0.25)
        assert head.u[10, 20] == pytest.approx(0.5 * (0.01 * 20 + 0.5), abs=FLOW_QUANTUM)
        assert np.abs(expr.stack()).max() == 0.0
        assert facial.equals(head + FlowField.zeros(64, 64))


class TestSampleFiles:

    def test_write_and_load(self, sample, tmp_path):
        directory = write_sample(sample, tmp_path / "s")
        for name in SAMPLE_FILES.values():
            assert (directory / name).is_file()

        sidecar = json.loads((directory / "params.json").read_text(encoding="utf-8"))
        assert list(sidecar) == sorted(sidecar)
        assert sidecar["seed"] == 7

        loaded = load_sample(directory)
        assert loaded.params == sample.params
        assert loaded.config == sample.config
        assert loaded.f_facial_gt.equals(sample.f_facial_gt)
        assert loaded.f_head_gt.equals(sample.f_head_gt)
        assert loaded.f_expr_gt.equals(loaded.f_facial_gt - loaded.f_head_gt)
        assert np.allclose(loaded.onset.pixels, sample.onset.pixels, atol=0.5 / 255 + 1e-12)

    def test_output_is_byte_identical(self, small_config, tmp_path):
        for run in ("a", "b"):
            write_sample(generate_sample(3, small_config), tmp_path / run)
        for name in SAMPLE_FILES.values():
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_list_sample_dirs(self, sample, tmp_path):
        write_sample(sample, tmp_path / "sample_0001")
        write_sample(sample, tmp_path / "sample_0000")
        (tmp_path / "notes").mkdir()
        assert [p.name for p in list_sample_dirs(tmp_path)] == ["sample_0000", "sample_0001"]


def test_apex_reconstructs_onset(small_config):
    for seed in range(5):
        sample = generate_sample(seed, small_config)
        back = warp_image(sample.apex, sample.f_facial_gt)
        assert np.abs(back.pixels - sample.onset.pixels)[8:-8, 8:-8].mean() < 0.02


def test_texture_is_well_posed():
    for seed in range(20):
        pixels = base_texture(seed, 64, 64).pixels
        assert pixels.max() - pixels.min() >= 0.5
        gy, gx = np.gradient(pixels)
        assert (np.hypot(gx, gy) > 1e-4).mean() >= 0.3


@pytest.mark.parametrize("seed", range(20))
def test_decomposition_survives_round_trip(seed, tmp_path):
    loaded = load_sample(write_sample(generate_sample(seed), tmp_path / "s"))
    assert loaded.f_expr_gt.equals(loaded.f_facial_gt - loaded.f_head_gt)
