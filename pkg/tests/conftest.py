import numpy as np
import pytest

import polarproj as pp

PFA_ANGLES = (0.0, np.pi / 4, np.pi / 2, 3 * np.pi / 4)

# 30 degree tilt about the camera x-axis, facing the camera.
TILTED_NORMAL = (0.0, np.sin(np.pi / 6), -np.cos(np.pi / 6))


@pytest.fixture(scope="session")
def small_k():
    return pp.Intrinsics(fx=60.0, fy=60.0, cx=24.0, cy=20.0, width=49, height=41)


@pytest.fixture(scope="session")
def medium_k():
    # Same field of view as the full-size sensor, at 1/10 scale.
    return pp.Intrinsics(fx=230.0, fy=230.0, cx=122.0, cy=102.0,
                         width=245, height=205)


@pytest.fixture(scope="session")
def model():
    return pp.SpecularDolpModel(n=1.5, a=1.0)


@pytest.fixture(scope="session")
def tilted_scene(model):
    return pp.SceneSpec.plane(normal=TILTED_NORMAL, distance=2.0, model=model)


@pytest.fixture(scope="session")
def medium_sim(tilted_scene, medium_k):
    """Noise-free multishot render of the tilted plane at medium resolution."""
    capture, gt = pp.simulate_capture(tilted_scene, medium_k, PFA_ANGLES)
    return capture, gt


@pytest.fixture(scope="session")
def medium_estimate(medium_sim):
    capture, gt = medium_sim
    smap = pp.estimate_stokes_multishot(capture, gt.eff_angles)
    return smap, gt


def circ_dist(a, b, period=np.pi):
    d = np.abs(a - b) % period
    return np.minimum(d, period - d)
