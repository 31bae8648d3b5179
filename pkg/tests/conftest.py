import numpy as np
import pytest

from cobbnet.tensor import Shape2D

H_FD = 1e-5
REL_TOL = 1e-4


def central_diff(f, arr, h=H_FD):
    """Central-difference gradient of scalar ``f()`` w.r.t. ``arr`` (perturbed in place)."""
    grad = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = arr[idx]
        arr[idx] = old + h
        up = f()
        arr[idx] = old - h
        down = f()
        arr[idx] = old
        grad[idx] = (up - down) / (2 * h)
    return grad


def max_rel_error(analytic, numeric, floor=1e-7):
    a, n = np.asarray(analytic), np.asarray(numeric)
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def rect_vertebra(cx, cy, half_w, half_h, angle_deg):
    """Corners (TL, TR, BL, BR) of a rectangle rotated by ``angle_deg``."""
    t = np.radians(angle_deg)
    along = np.array([np.cos(t), np.sin(t)])
    across = np.array([-np.sin(t), np.cos(t)])
    c = np.array([cx, cy])
    return np.array([c - half_w * along - half_h * across, c + half_w * along - half_h * across,
                     c - half_w * along + half_h * across, c + half_w * along + half_h * across])


def spine_from_tilts(tilts, size=Shape2D(512, 256), half_w=20.0, half_h=8.0):
    from cobbnet.geometry import LandmarkSet

    pitch = size.height / (len(tilts) + 1)
    return LandmarkSet(np.array([
        rect_vertebra(size.width / 2, pitch * (k + 1), half_w, half_h, t) for k, t in enumerate(tilts)
    ]))


def random_spine(rng, size=Shape2D(256, 128), max_tilt=40.0, quantize=None):
    """Random but plausible landmark set; ``quantize`` snaps tilts to a grid to create ties."""
    tilts = rng.uniform(-max_tilt, max_tilt, 17)
    if quantize:
        tilts = np.round(tilts / quantize) * quantize
    pitch = size.height / 18.0
    xs = size.width / 2 + rng.uniform(-0.15, 0.15, 17) * size.width
    pts = []
    for k in range(17):
        quad = rect_vertebra(xs[k], pitch * (k + 1), size.width * rng.uniform(0.08, 0.18),
                             pitch * rng.uniform(0.2, 0.4), tilts[k])
        quad += rng.normal(0, 0.5, quad.shape)
        pts.append(quad)
    from cobbnet.geometry import LandmarkSet

    return LandmarkSet(np.array(pts))
