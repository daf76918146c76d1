import numpy as np
import pytest

from thermotact.calibration import CalibrationError, CalibrationModel, TempFlag
from thermotact.pipeline import STAGES, Decoder, DecoderParams, RestFrameError, run_decode_pipeline
from thermotact.sensor import ContactPrimitive, ContactScenario, SensorConfig, render_frame

CENTRE = (20.0, 20.0)


def _frame(config, normal=0.0, shear=(0.0, 0.0), temp=25.0, noise=0.0, seed=0):
    contact = ContactPrimitive(CENTRE, "disk", 2.0, temperature_c=temp, normal_force_n=normal, shear_force_n=shear)
    return render_frame(ContactScenario((contact,), noise, seed), config)


@pytest.fixture(scope="module")
def timeline(config, rest_frame, truth_calib):
    # rest, press ramp to 6 N, then hold 6 N while shear ramps along +X
    schedule = [(0.0, 0.0)] + [(f, 0.0) for f in (1.5, 3.0, 4.5, 6.0)] + [(6.0, s) for s in (0.25, 0.5, 0.75, 1.0)]
    frames = [rest_frame] + [_frame(config, f, (s, 0.0), temp=120.0) for f, s in schedule[1:]]
    return schedule, run_decode_pipeline(frames, truth_calib, config)


class TestRestFrame:
    def test_rest_only_bundle(self, config, rest_frame, truth_calib):
        (bundle,) = run_decode_pipeline([rest_frame], truth_calib, config)
        assert bundle.frame_id == 0
        assert (bundle.temperature.flags == TempFlag.BELOW_RANGE).all()
        assert not bundle.pressure.pressures.any()
        assert not bundle.shear.vectors.any()
        assert len(bundle.displacement) == config.marker_count

    def test_bad_reference(self, config, truth_calib):
        pressed = _frame(config)
        blank = np.full((480, 640), 0.2)
        with pytest.raises(RestFrameError, match="markers"):
            run_decode_pipeline([blank, pressed], truth_calib, config)

    def test_decode_before_reference(self, config, rest_frame, truth_calib):
        with pytest.raises(RestFrameError, match="reference"):
            Decoder(config, truth_calib).decode(rest_frame)

    def test_explicit_reference(self, config, rest_frame, truth_calib):
        frames = [_frame(config, 4.0), _frame(config, 2.0)]
        bundles = run_decode_pipeline(frames, truth_calib, config, reference=rest_frame)
        assert [b.frame_id for b in bundles] == [0, 1]
        assert bundles[0].pressure.total > bundles[1].pressure.total > 0

    def test_frame_shape_checked(self, config, rest_frame, truth_calib):
        dec = Decoder(config, truth_calib)
        dec.set_reference(rest_frame)
        with pytest.raises(ValueError, match="640x480"):
            dec.decode(np.zeros((100, 100)))

    def test_empty_input(self, config, truth_calib):
        assert run_decode_pipeline([], truth_calib, config) == []


class TestCalibrationRequirement:
    @pytest.mark.parametrize("calib", [None, CalibrationModel()])
    def test_missing_calibration(self, config, rest_frame, calib):
        with pytest.raises(CalibrationError, match="raw"):
            run_decode_pipeline([rest_frame], calib, config)

    def test_raw_mode_native_units(self, config, rest_frame):
        bundles = run_decode_pipeline([rest_frame, _frame(config, 4.0, (0.5, 0.0))], None, config, raw=True)
        b = bundles[1]
        assert b.temperature.unit == "intensity"
        assert b.shear.unit == "px"
        assert b.pressure.gain == 1.0
        assert np.array_equal(b.pressure.pressures, np.maximum(b.pressure.rates, 0.0))
        assert np.allclose(b.shear.vectors, b.displacement.displacement_px)


class TestTimeline:
    def test_pressure_leads_shear(self, timeline):
        schedule, bundles = timeline
        totals = np.array([b.pressure.total for b in bundles])
        # net vector: the radial press pattern cancels, a drag does not
        shear = np.array([np.hypot(*b.shear.mean_vector) for b in bundles])
        press = slice(1, 5)
        assert (np.diff(totals[press]) > 0).all()
        # shear stays near zero until the drag phase, then grows
        quiet = shear[press].max()
        assert quiet < 0.1 * shear[-1]
        # pressure switches on with the first press frame, net shear only with the drag
        assert np.argmax(totals > 0.1 * totals[4]) == 1
        assert np.argmax(shear > 0.1 * shear[-1]) == 5
        assert (np.diff(shear[5:]) > 0).all()

    def test_shear_points_along_drag(self, timeline):
        _, bundles = timeline
        for b in bundles[5:]:
            assert abs(b.shear.direction_deg) < 5.0

    def test_bundle_fields_share_frame(self, timeline):
        _, bundles = timeline
        for i, b in enumerate(bundles):
            assert b.frame_id == i
            assert len(b.pressure) == len(b.displacement) == len(b.shear)
            assert np.array_equal(b.pressure.ids, b.displacement.marker_ids)


@pytest.fixture(scope="module")
def stream(config, rest_frame, truth_calib):
    frames = [rest_frame] + [_frame(config, 3.0 + 3.0 * np.sin(i / 10), temp=100.0, noise=0.01, seed=i)
                             for i in range(99)]
    return frames, run_decode_pipeline(frames, truth_calib, config)


class TestStream:
    def test_count_contract(self, stream):
        frames, bundles = stream
        assert len(bundles) == 100
        assert [b.frame_id for b in bundles] == list(range(100))
        assert np.median([b.timing["total"] for b in bundles]) > 0

    def test_timing_covers_stages(self, stream):
        _, bundles = stream
        for b in bundles:
            assert set(STAGES) <= set(b.timing)
            assert b.stage_ms <= b.timing["total"]
        ratio = np.median([b.stage_ms / b.timing["total"] for b in bundles])
        assert ratio >= 0.95

    def test_workers_match_serial(self, stream, config, truth_calib):
        frames, serial = stream
        threaded = run_decode_pipeline(frames[:20], truth_calib, config, workers=4)
        for a, b in zip(serial[:20], threaded):
            assert a.frame_id == b.frame_id
            assert np.array_equal(a.temperature.values, b.temperature.values)
            assert np.array_equal(a.pressure.pressures, b.pressure.pressures)
            assert np.array_equal(a.shear.vectors, b.shear.vectors)


def test_full_frame_matches_crop(config, rest_frame, truth_calib):
    frame = _frame(config, 5.0, (0.3, 0.1), temp=140.0)
    crop = run_decode_pipeline([rest_frame, frame], truth_calib, config)[1]
    full = run_decode_pipeline([rest_frame, frame], truth_calib, config,
                               params=DecoderParams(crop_to_field=False))[1]
    assert np.array_equal(crop.markers.ids, full.markers.ids)
    assert np.abs(crop.markers.centroids - full.markers.centroids).max() < 0.05
    assert crop.pressure.total == pytest.approx(full.pressure.total, rel=0.05)


def test_other_resolution():
    config = SensorConfig(px_per_mm=8.0)
    rest = render_frame(ContactScenario(), config)
    press = render_frame(ContactScenario((ContactPrimitive((20.0, 20.0), "disk", 2.0, normal_force_n=5.0),)), config)
    bundles = run_decode_pipeline([rest, press], None, config, raw=True)
    assert len(bundles[1].markers) == 1600
    assert bundles[1].pressure.total > 0
