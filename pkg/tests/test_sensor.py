import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from thermotact.sensor import (ContactPrimitive, ContactScenario, GrayFrame, ScenarioError, SensorConfig,
                               TruthCurve, brightness_of, deform_grid, footprint_weight, marker_centers_px,
                               render_background, render_frame)


class TestSensorConfig:
    def test_defaults(self, config):
        assert config.marker_count == 1600
        assert config.pitch_px == pytest.approx(10.0)
        assert config.marker_radius_px == pytest.approx(1.25)
        assert config.field_size_px == (400.0, 400.0)

    def test_rest_markers_sit_on_pixel_centres(self, config):
        px = config.mm_to_px(config.rest_grid_mm())
        assert np.allclose(px % 1.0, 0.5)
        x0, y0, x1, y1 = config.field_bounds_px
        assert x0 >= 0 and y0 >= 0
        assert x1 <= config.frame_width_px and y1 <= config.frame_height_px

    def test_mm_px_round_trip(self, config, rng):
        pts = rng.uniform(0, 40, (50, 2))
        assert np.allclose(config.px_to_mm(config.mm_to_px(pts)), pts)

    @pytest.mark.parametrize("kwargs", [
        {"px_per_mm": 0.0},
        {"marker_grid": (0, 40)},
        {"sensing_field_mm": (70.0, 40.0)},
        {"marker_pitch_mm": 2.0},
        {"base_brightness": 1.5},
        {"supersample": 2},
    ])
    def test_rejects_invalid(self, kwargs):
        with pytest.raises(ValueError):
            SensorConfig(**kwargs)

    def test_from_dict_rejects_unknown_keys(self):
        with pytest.raises(ValueError, match="unknown"):
            SensorConfig.from_dict({"px_per_mm": 10.0, "colour": "red"})

    def test_dict_round_trip(self, config):
        assert SensorConfig.from_dict(json.loads(json.dumps(config.to_dict()))) == config


class TestBrightness:
    @pytest.mark.parametrize("temp, expected", [
        (25.0, 0.2), (50.0, 0.2), (180.0, 0.8), (200.0, 0.6), (230.0, 0.6),
        (120.0, 0.2 + 0.6 * 70 / 130),
    ])
    def test_knots(self, temp, expected):
        assert brightness_of(temp) == pytest.approx(expected)

    def test_vectorised(self):
        out = brightness_of(np.array([50.0, 180.0, 200.0]))
        assert np.allclose(out, [0.2, 0.8, 0.6])

    @given(st.floats(50.0, 180.0), st.floats(50.0, 180.0))
    def test_monotone_on_rising_branch(self, a, b):
        lo, hi = sorted((a, b))
        assert brightness_of(lo) <= brightness_of(hi)

    @given(st.floats(180.0, 200.0), st.floats(180.0, 200.0))
    def test_monotone_on_falling_branch(self, a, b):
        lo, hi = sorted((a, b))
        assert brightness_of(lo) >= brightness_of(hi)

    def test_invalid_curve(self):
        with pytest.raises(ValueError):
            TruthCurve(onset_c=190.0)


class TestDeformGrid:
    def test_rest_is_identity(self, config):
        assert np.array_equal(deform_grid(ContactScenario(), config), config.rest_grid_mm())

    def test_normal_press_at_one_sigma(self, config):
        # marker (20.5, 20.5) sits one radius to the right of the disk centre
        contact = ContactPrimitive((19.0, 20.5), "disk", 1.5, normal_force_n=4.0)
        moved = deform_grid(ContactScenario((contact,)), config)
        rest = config.rest_grid_mm()
        k = int(np.flatnonzero(np.all(np.isclose(rest, (20.5, 20.5)), axis=1))[0])
        # oracle: k_n * F * (d / s) * exp(-d^2 / 2 s^2) with d = s
        expected = 0.05 * 4.0 * math.exp(-0.5)
        assert expected == pytest.approx(0.121306, abs=1e-6)
        assert moved[k] - rest[k] == pytest.approx([expected, 0.0], abs=1e-12)

    def test_shear_at_centre(self, config):
        contact = ContactPrimitive((20.5, 20.5), "disk", 1.5, shear_force_n=(1.0, 0.0))
        moved = deform_grid(ContactScenario((contact,)), config)
        rest = config.rest_grid_mm()
        k = int(np.flatnonzero(np.all(np.isclose(rest, (20.5, 20.5)), axis=1))[0])
        assert moved[k] - rest[k] == pytest.approx([0.4, 0.0], abs=1e-12)

    def test_press_is_radially_symmetric(self, config):
        contact = ContactPrimitive((20.5, 20.5), "disk", 2.0, normal_force_n=5.0)
        d = deform_grid(ContactScenario((contact,)), config) - config.rest_grid_mm()
        rel = config.rest_grid_mm() - 20.5
        # displacement is parallel to the offset from the centre
        cross = rel[:, 0] * d[:, 1] - rel[:, 1] * d[:, 0]
        assert np.abs(cross).max() < 1e-12
        assert (np.einsum("ij,ij->i", rel, d) >= 0).all()


class TestRender:
    def test_rest_frame(self, config, rest_frame):
        px = rest_frame.pixels
        assert px.shape == (480, 640)
        assert px.max() == pytest.approx(0.2)
        # marker centres are fully dark
        centres = marker_centers_px(ContactScenario(), config)
        cols = np.floor(centres[:, 0]).astype(int)
        rows = np.floor(centres[:, 1]).astype(int)
        assert np.all(px[rows, cols] == 0.0)

    def test_hot_square_level(self, config):
        contact = ContactPrimitive((20.0, 20.0), "square", 10.0, temperature_c=120.0)
        frame = render_frame(ContactScenario((contact,)), config)
        # pixel (240, 320) is 5 mm inside the edge and between markers
        assert frame.pixels[240, 320] == pytest.approx(0.523077, abs=1e-6)

    def test_background_takes_max_of_contacts(self, config):
        a = ContactPrimitive((15.0, 20.0), "disk", 3.0, temperature_c=100.0)
        b = ContactPrimitive((17.0, 20.0), "disk", 3.0, temperature_c=150.0)
        both = render_background(ContactScenario((a, b)), config)
        sep = np.maximum(render_background(ContactScenario((a,)), config),
                         render_background(ContactScenario((b,)), config))
        assert np.allclose(both, sep)

    def test_deterministic(self, config):
        s = ContactScenario((ContactPrimitive((10.0, 10.0), temperature_c=90.0),), 0.02, 7)
        assert np.array_equal(render_frame(s, config).pixels, render_frame(s, config).pixels)
        other = render_frame(s.with_seed(8), config).pixels
        assert not np.array_equal(render_frame(s, config).pixels, other)

    def test_footprint_weight_range(self, config):
        w = footprint_weight(ContactPrimitive((20.0, 20.0), "disk", 3.0), config)
        assert w.min() >= 0.0 and w.max() <= 1.0
        assert w[240, 320] == pytest.approx(1.0, abs=1e-6)
        assert w[10, 10] == 0.0

    def test_cold_contact_leaves_base(self, config):
        contact = ContactPrimitive((20.0, 20.0), "disk", 3.0, temperature_c=30.0)
        assert np.all(render_background(ContactScenario((contact,)), config) == pytest.approx(0.2))


class TestScenarioErrors:
    def test_footprint_outside_field(self, config):
        s = ContactScenario((ContactPrimitive((1.0, 20.0), "disk", 2.0),))
        with pytest.raises(ScenarioError, match="outside"):
            render_frame(s, config)

    @pytest.mark.parametrize("kwargs", [
        {"shape": "triangle"},
        {"size_mm": 0.0},
        {"temperature_c": 300.0},
        {"normal_force_n": -1.0},
        {"edge_blur_mm": -0.1},
    ])
    def test_invalid_primitive(self, kwargs):
        with pytest.raises(ScenarioError):
            ContactPrimitive((20.0, 20.0), **kwargs)

    def test_negative_noise(self):
        with pytest.raises(ScenarioError):
            ContactScenario(pixel_noise_sigma=-0.1)

    def test_gray_frame_validation(self):
        with pytest.raises(ValueError):
            GrayFrame(np.zeros((2, 2, 3)))
        with pytest.raises(ValueError):
            GrayFrame(np.full((2, 2), 1.5))


def test_scenario_json_round_trip():
    s = ContactScenario((ContactPrimitive((12.0, 8.0), "square", 4.0, 140.0, 2.0, (0.3, -0.1)),), 0.01, 5)
    back = ContactScenario.from_dict(json.loads(json.dumps(s.to_dict())))
    assert back == s
