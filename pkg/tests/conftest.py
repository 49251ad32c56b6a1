import numpy as np
import pytest

from depthsync import kernels
from depthsync.geometry import CameraIntrinsics, RigidTransform
from depthsync.simulator import RigSpec, SceneSpec, SensorSpec

# native portrait LQ (phone) and landscape HQ (ToF) cameras
K_LQ_FULL = CameraIntrinsics(500.0, 500.0, 239.5, 319.5, 480, 640)
K_HQ_FULL = CameraIntrinsics(365.0, 365.0, 255.5, 211.5, 512, 424)
# quarter-resolution versions of the portrait LQ / landscape HQ cameras
K_LQ = CameraIntrinsics(125.0, 125.0, 59.5, 79.5, 120, 160)
K_HQ = CameraIntrinsics(91.0, 91.0, 63.5, 52.5, 128, 106)


def random_extrinsic(rng, max_deg=10.0, max_t=0.1):
    axis = rng.normal(size=3)
    t = rng.normal(size=3)
    t = t / np.linalg.norm(t) * rng.uniform(0, max_t)
    return RigidTransform.from_axis_angle(axis, rng.uniform(-max_deg, max_deg), t)


def small_rig(extrinsic=None, delta_ms=0.0, lq_noise=0.0, hq_start=12.0, lq_quant=1.0):
    lq = SensorSpec(K_LQ, fps=30.0, jitter_ms=1.0, noise_mm=lq_noise, quant_mm=lq_quant)
    hq = SensorSpec(K_HQ, fps=25.0, jitter_ms=1.0, start_ms=hq_start, quant_mm=1.0)
    return RigSpec(lq, hq, extrinsic or RigidTransform.identity(), delta_ms)


def cross_render_agreement(scene, extrinsic, k_lq=K_LQ_FULL, k_hq=K_HQ_FULL, quant=0.001, t=0.0):
    """Fraction of pixels where HQ-render-then-reproject matches a direct LQ render
    within two quantization steps, and the number of pixels compared."""
    from depthsync.geometry import reproject_depth
    from depthsync.simulator import render_frame

    def q(d):
        return np.rint(d / quant) * quant

    hq = render_frame(scene, k_hq, extrinsic, t)
    ref = q(render_frame(scene, k_lq, RigidTransform.identity(), t).depth)
    warped, _ = reproject_depth(q(hq.depth), hq.color, k_hq, k_lq, extrinsic)
    both = (warped > 0) & (ref > 0)
    ok = np.abs(warped - ref)[both] <= 2 * quant + 1e-9
    return float(ok.mean()), int(both.sum())


@pytest.fixture(scope="session")
def static_scene():
    return SceneSpec.default(deg_per_s=0.0)


@pytest.fixture(scope="session")
def moving_scene():
    return SceneSpec.default(deg_per_s=90.0)


@pytest.fixture(params=kernels.available_backends())
def backend(request):
    prev = kernels.set_backend(request.param)
    yield request.param
    kernels.set_backend(prev)


ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
