"""Polarization imaging on projective cameras.

Per-pixel ray frames, tilted-polarizer effective angles, Stokes estimation
with built-in DoFP demosaicing, ideal-polarizer image synthesis, normal and
plane recovery, and a forward-simulation oracle.
"""

from . import config, errors
from .polcore import (StokesVector, PolarizationSummary, SinusoidParams,
                      linear_polarizer_mueller, rotator_mueller, apply_mueller,
                      dolp, aolp, mixture_decompose, sinusoid_params,
                      intensity_through_polarizer, polarization_summary)
from .rayframes import (Intrinsics, RayFrame, RayFrameField,
                        EffectiveAngleField, backproject, local_frame,
                        effective_angle, build_frame_field,
                        build_effective_angles)
from .stokes import (MosaicLayout, MosaicCapture, MultishotCapture, StokesMap,
                     estimate_stokes_multishot, estimate_stokes_dofp,
                     estimate_stokes_orthographic, closed_form_pfa,
                     synthesize_ideal_images, FRAME_LOCAL, FRAME_CAMERA)
from .sfp import (SpecularDolpModel, NormalField, PlaneEstimate,
                  AmbiguityCandidateSet, ErrorStats, dolp_specular,
                  zenith_from_dolp, normals_local, rotate_normals_to_camera,
                  oracle_disambiguate, estimate_plane_normal,
                  angular_error_stats, angular_errors, polarization_maps,
                  fit_dolp_model)
from .sim import (SceneSpec, NoiseSpec, GroundTruth, simulate_capture,
                  render_expected_aolp)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
