"""Decode temperature, pressure and shear from one grayscale tactile frame.

The film glows with temperature and carries a grid of opaque markers: marker
removal plus a calibrated brightness curve gives temperature, Voronoi cell
area change gives pressure, and marker displacement gives shear. A synthetic
sensor renders ground-truth frames for closed-loop checks.
"""

from .calibration import (CalibrationError, CalibrationModel, CalibrationSample, LinearGain, TempFlag,
                          TemperatureCurve, fit_linear_gain, fit_temperature_curve, invert_temperature,
                          isotonic_regression)
from .markers import (DisplacementField, MarkerSet, adaptive_threshold, extract_markers, refine_centroids,
                      track_markers)
from .mechanics import PressureField, ShearField, area_change_rates, decode_pressure, decode_shear
from .pipeline import Decoder, DecoderParams, ModalityBundle, RestFrameError, run_decode_pipeline
from .sensor import (ContactPrimitive, ContactScenario, GrayFrame, ScenarioError, SensorConfig, TruthCurve,
                     brightness_of, deform_grid, render_frame)
from .thermal import (TemperatureField, ThermalParams, decode_temperature, guided_filter, inpaint_mask,
                      marker_free_brightness)
from .voronoi import Tessellation, TessellationError, voronoi_tessellate

__version__ = "0.1.0"
