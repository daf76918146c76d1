import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from thermotact.markers import (MarkerSet, adaptive_threshold, default_offset, default_window, extract_markers,
                                refine_centroids, track_markers, worst_case_coverage)
from thermotact.pipeline import Decoder
from thermotact.sensor import _marker_coverage
from thermotact.sensor import (ContactPrimitive, ContactScenario, SensorConfig, deform_grid, marker_centers_px,
                               render_frame)


def _detect(frame, config, refine=True):
    px = frame.pixels if hasattr(frame, "pixels") else frame
    ms = extract_markers(adaptive_threshold(px, default_window(config), default_offset(config)), config)
    return refine_centroids(ms, px, config) if refine else ms


def _truth_set(points, shape):
    return MarkerSet(np.arange(len(points)), np.asarray(points, float), np.zeros(len(points), np.int64), shape)


@pytest.fixture(scope="module")
def rest_markers(config, rest_frame):
    return _detect(rest_frame, config)


class TestAdaptiveThreshold:
    def test_constant_frame_is_empty(self):
        assert not adaptive_threshold(np.full((60, 80), 0.4), 21, 0.08).any()

    def test_single_disk(self):
        # analytic membership oracle: disk of radius 4 px on a 0.5 background
        h = w = 41
        yy, xx = np.mgrid[0:h, 0:w] + 0.5
        r2 = (xx - 20.5) ** 2 + (yy - 20.5) ** 2
        img = np.where(r2 <= 16.0, 0.0, 0.5)
        mask = adaptive_threshold(img, 21, 0.08)
        assert mask[r2 <= 16.0].all()
        assert not mask[r2 > 25.0].any()

    def test_default_grid_has_1600_components(self, config, rest_frame):
        import cv2
        mask = adaptive_threshold(rest_frame.pixels, default_window(config), 0.08)
        n, _ = cv2.connectedComponents(mask.astype(np.uint8), connectivity=8)
        assert n - 1 == 1600

    def test_defaults(self, config):
        assert default_window(config) == 21
        assert default_offset(config) == 0.08

    @pytest.mark.parametrize("window", [2, 4, 1])
    def test_bad_window(self, window):
        with pytest.raises(ValueError):
            adaptive_threshold(np.zeros((30, 30)), window)

    def test_window_larger_than_frame(self):
        with pytest.raises(ValueError, match="exceeds"):
            adaptive_threshold(np.zeros((10, 30)), 21)

    def test_worst_case_coverage(self):
        # quarter disk inside the unit pixel for r <= 1
        assert worst_case_coverage(0.6) == pytest.approx(np.pi * 0.36 / 4, abs=5e-3)
        assert worst_case_coverage(2.0) == 1.0


class TestExtract:
    def test_empty(self, config):
        ms = extract_markers(np.zeros((50, 50), bool), config)
        assert len(ms) == 0 and ms.centroids.shape == (0, 2)

    @pytest.mark.parametrize("ppm, speck_px", [(15.0, 2), (10.0, 1)])
    def test_speck_rejected(self, ppm, speck_px):
        # a 2 px speck is only below a quarter of the nominal area from ~13 px/mm up
        config = SensorConfig(frame_height_px=640, px_per_mm=ppm)
        assert speck_px < 0.25 * config.nominal_marker_area_px
        mask = np.zeros((40, 40), bool)
        mask[5, 5:5 + speck_px] = True
        yy, xx = np.mgrid[0:40, 0:40] + 0.5
        mask |= (xx - 20.5) ** 2 + (yy - 20.5) ** 2 <= config.marker_radius_px ** 2
        ms = extract_markers(mask, config)
        assert len(ms) == 1
        assert ms.centroids[0] == pytest.approx([20.5, 20.5])

    def test_origin_offset(self, config):
        mask = np.zeros((20, 20), bool)
        mask[9:12, 9:12] = True
        ms = extract_markers(mask, config, origin=(100, 50))
        assert ms.centroids[0] == pytest.approx([110.5, 60.5])

    def test_rest_render_exact(self, config, rest_markers):
        truth = marker_centers_px(ContactScenario(), config)
        assert len(rest_markers) == 1600
        assert np.abs(rest_markers.centroids - truth).max() <= 0.1
        # ids run row-major like the analytic grid
        assert np.array_equal(rest_markers.ids, np.arange(1600))

    @pytest.mark.parametrize("contact", [
        ContactPrimitive((20.0, 20.0), "disk", 2.0, 120.0, 6.0, (0.5, 0.2)),
        ContactPrimitive((10.0, 30.0), "disk", 1.5, 25.0, 8.0),
        ContactPrimitive((20.0, 20.0), "disk", 1.5, 60.0, 1.0, (1.0, 0.0)),
    ])
    def test_pressed_render_within_tolerance(self, config, contact):
        s = ContactScenario((contact,))
        markers, _ = Decoder(config, raw=True).detect(render_frame(s, config))
        truth = marker_centers_px(s, config)
        match = track_markers(_truth_set(truth, (480, 640)), markers, config.pitch_px / 2)
        assert len(markers) == len(match) == 1600
        assert np.hypot(*match.displacement_px.T).max() <= 0.1

    def test_invariants(self, config, rest_markers):
        assert len(np.unique(rest_markers.ids)) == len(rest_markers)
        nominal = config.nominal_marker_area_px
        assert ((rest_markers.areas >= 0.25 * nominal) & (rest_markers.areas <= 4 * nominal)).all()

    @pytest.mark.parametrize("ppm", [5.0, 5.3, 5.5, 6.7, 8.0, 9.2, 10.0, 11.5, 12.5, 13.0, 14.4, 15.0])
    def test_round_trip_over_resolutions(self, ppm):
        height = 480 if 40 * ppm <= 478 else 640
        config = SensorConfig(frame_height_px=height, px_per_mm=ppm)
        frame = render_frame(ContactScenario(), config)
        ms = _detect(frame, config, refine=False)
        assert len(ms) == config.marker_count

    def test_integer_translation_equivariance(self, config, rest_frame):
        dx, dy = 3, -2
        px = rest_frame.pixels
        shifted = np.full_like(px, 0.2)
        shifted[max(dy, 0):px.shape[0] + min(dy, 0), max(dx, 0):px.shape[1] + min(dx, 0)] = \
            px[max(-dy, 0):px.shape[0] - max(dy, 0), max(-dx, 0):px.shape[1] - max(dx, 0)]
        a = _detect(px, config)
        b = _detect(shifted, config)
        assert len(a) == len(b)
        assert np.abs(b.centroids - a.centroids - (dx, dy)).max() < 1e-9


class TestRefine:
    def test_shape_mismatch(self, config, rest_markers):
        with pytest.raises(ValueError):
            refine_centroids(rest_markers, np.zeros((10, 10)), config)

    def test_empty_passthrough(self, config):
        ms = MarkerSet.empty((20, 20))
        assert refine_centroids(ms, np.zeros((20, 20)), config) is ms


class TestTrack:
    def test_identity(self, rest_markers):
        d = track_markers(rest_markers, rest_markers, 5.0)
        assert len(d) == 1600
        assert not d.displacement_px.any()
        assert len(d.unmatched_ref_ids) == 0 and len(d.unmatched_cur_ids) == 0

    @pytest.mark.parametrize("shift", [(0.3, 0.0), (0.0, -0.45), (2.7, 1.9)])
    def test_subpixel_translation_render(self, config, rest_markers, shift):
        # render oracle: the rest grid drawn at a known offset
        centres = marker_centers_px(ContactScenario(), config) + shift
        pixels = config.base_brightness * (1.0 - _marker_coverage(centres, config))
        cur = _detect(pixels, config)
        d = track_markers(rest_markers, cur, config.pitch_px / 2)
        assert len(d) == 1600 and len(d.unmatched_cur_ids) == 0
        assert np.array_equal(d.marker_ids, d.cur_ids)
        assert np.abs(d.displacement_px - shift).max() <= 0.1

    def test_missing_marker(self, rest_markers):
        keep = np.arange(len(rest_markers)) != 37
        cur = MarkerSet(rest_markers.ids[keep], rest_markers.centroids[keep], rest_markers.areas[keep],
                        rest_markers.shape)
        d = track_markers(rest_markers, cur, 5.0)
        assert len(d) == 1599
        assert d.unmatched_ref_ids.tolist() == [37]

    def test_nearer_claimant_wins(self):
        ref = _truth_set([[10.0, 10.0]], (20, 20))
        cur = _truth_set([[11.0, 10.0], [10.5, 10.0]], (20, 20))
        d = track_markers(ref, cur, 5.0)
        assert d.cur_ids.tolist() == [1]
        assert d.unmatched_cur_ids.tolist() == [0]

    def test_gate(self):
        d = track_markers(_truth_set([[10.0, 10.0]], (20, 20)), _truth_set([[16.0, 10.0]], (20, 20)), 5.0)
        assert len(d) == 0

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000), st.integers(5, 60))
    def test_matching_is_injective(self, seed, n):
        rng = np.random.default_rng(seed)
        ref = _truth_set(rng.uniform(0, 50, (n, 2)), (50, 50))
        cur = _truth_set(rng.uniform(0, 50, (n + 3, 2)), (50, 50))
        d = track_markers(ref, cur, 6.0)
        assert len(set(d.marker_ids.tolist())) == len(d)
        assert len(set(d.cur_ids.tolist())) == len(d)
        assert (np.hypot(*d.displacement_px.T) < 6.0).all()
        assert len(d) + len(d.unmatched_ref_ids) == n
        assert len(d) + len(d.unmatched_cur_ids) == n + 3


@settings(max_examples=30, deadline=None)
@given(normal=st.floats(0.0, 8.0), shear=st.floats(0.0, 1.0), angle=st.floats(0.0, 2 * np.pi),
       radius=st.floats(1.0, 5.0))
def test_displacement_stays_below_gate(normal, shear, angle, radius):
    # the characterisation envelope: presses up to 8 N, or 1 N held while shearing up to 1 N
    config = SensorConfig()
    for fn, fs in ((normal, 0.0), (1.0, shear)):
        c = ContactPrimitive((20.0, 20.0), "disk", radius, normal_force_n=fn,
                             shear_force_n=(fs * np.cos(angle), fs * np.sin(angle)))
        d = (deform_grid(ContactScenario((c,)), config) - config.rest_grid_mm()) * config.px_per_mm
        assert np.hypot(*d.T).max() < config.pitch_px / 2
