import math

import numpy as np
import pytest

from binmap.geometry import (GridSpec, Pose, VelocityObs, cell_to_world,
                             normalize_angle, pose_compose, pose_relative,
                             rasterize_points, velocity_compose, world_to_cell)
from binmap.rng import Rng


def test_compose_identity():
    p = pose_compose(Pose(0, 0, 0), VelocityObs(0, 0, 0))
    assert (p.tx, p.ty, p.theta) == (0, 0, 0)


def test_compose_rotated_translation():
    # at heading pi/2 a forward step moves along +y
    p = pose_compose(Pose(2, 3, math.pi / 2), VelocityObs(1, 0, 0))
    assert abs(p.tx - 2) < 1e-12
    assert abs(p.ty - 4) < 1e-12
    assert abs(p.theta - math.pi / 2) < 1e-12


def test_compose_theta_wraparound():
    p = pose_compose(Pose(0, 0, math.pi - 0.1), VelocityObs(0, 0, 0.2))
    expected = math.atan2(math.sin(math.pi + 0.1), math.cos(math.pi + 0.1))
    assert abs(p.theta - expected) < 1e-12
    assert abs(p.theta - (-math.pi + 0.1)) < 1e-12


def test_zero_velocity_is_identity_property():
    rng = Rng(1)
    for _ in range(200):
        a = Pose(rng.uniform(low=-50, high=50), rng.uniform(low=-50, high=50),
                 rng.uniform(low=-math.pi, high=math.pi))
        p = pose_compose(a, VelocityObs(0, 0, 0))
        assert (p.tx, p.ty, p.theta) == (a.tx, a.ty, a.theta)


def test_compose_associativity_property():
    rng = Rng(2)
    for _ in range(200):
        a = Pose(rng.uniform(low=-5, high=5), rng.uniform(low=-5, high=5),
                 rng.uniform(low=-math.pi, high=math.pi))
        u = VelocityObs(rng.uniform(low=-1, high=1), rng.uniform(low=-1, high=1),
                        rng.uniform(low=-1, high=1))
        v = VelocityObs(rng.uniform(low=-1, high=1), rng.uniform(low=-1, high=1),
                        rng.uniform(low=-1, high=1))
        lhs = pose_compose(pose_compose(a, u), v)
        rhs = pose_compose(a, velocity_compose(u, v))
        assert abs(lhs.tx - rhs.tx) < 1e-9
        assert abs(lhs.ty - rhs.ty) < 1e-9
        assert abs(normalize_angle(lhs.theta - rhs.theta)) < 1e-9


def test_theta_always_normalized():
    rng = Rng(3)
    for _ in range(100):
        p = Pose(0, 0, rng.uniform(low=-20, high=20))
        assert -math.pi < p.theta <= math.pi
        q = pose_compose(p, VelocityObs(0, 0, rng.uniform(low=-20, high=20)))
        assert -math.pi < q.theta <= math.pi


def test_pose_relative_inverts_compose():
    a = Pose(1.0, -2.0, 0.7)
    v = VelocityObs(0.4, -0.1, 0.3)
    b = pose_compose(a, v)
    w = pose_relative(a, b)
    assert abs(w.vx - v.vx) < 1e-12
    assert abs(w.vy - v.vy) < 1e-12
    assert abs(w.vtheta - v.vtheta) < 1e-12


def test_velocity_requires_finite():
    with pytest.raises(ValueError):
        VelocityObs(float("nan"), 0, 0)


def test_world_cell_examples():
    spec = GridSpec(100, 100, 0.05, (0.0, 0.0))
    assert world_to_cell(spec, (0.0, 0.0)) == (0.0, 0.0)
    cx, cy = world_to_cell(spec, (1.0, 0.5))
    assert abs(cx - 20) < 1e-12 and abs(cy - 10) < 1e-12


def test_world_cell_roundtrip():
    spec = GridSpec(64, 32, 0.05, (3.25, -7.5))
    rng = Rng(4)
    for _ in range(100):
        p = (rng.uniform(low=3.3, high=6.0), rng.uniform(low=-7.4, high=-6.0))
        q = cell_to_world(spec, world_to_cell(spec, p))
        assert abs(q[0] - p[0]) < 1e-9
        assert abs(q[1] - p[1]) < 1e-9


def test_grid_spec_validation():
    with pytest.raises(ValueError):
        GridSpec(0, 10, 0.05)
    with pytest.raises(ValueError):
        GridSpec(10, 10, 0.0)


def test_rasterize_empty():
    raster, dropped = rasterize_points([], GridSpec(8, 8, 0.1))
    assert raster.values.sum() == 0
    assert not raster.occupancy.any()
    assert dropped == 0


def test_rasterize_single_point():
    spec = GridSpec(8, 8, 0.1, (0.0, 0.0))
    raster, _ = rasterize_points([(0.3, 0.5, 0.7)], spec)
    assert raster.values[5, 3] == np.float32(0.7)
    assert raster.occupancy[5, 3]
    assert raster.occupancy.sum() == 1


def test_rasterize_mean_aggregation():
    spec = GridSpec(8, 8, 0.1, (0.0, 0.0))
    raster, _ = rasterize_points([(0.3, 0.5, 0.2), (0.31, 0.52, 0.8)], spec)
    assert abs(raster.values[5, 3] - 0.5) < 1e-7


def test_rasterize_drops_out_of_bounds():
    spec = GridSpec(4, 4, 0.1, (0.0, 0.0))
    raster, dropped = rasterize_points([(10.0, 0.0, 0.5), (0.1, 0.1, 0.5)], spec)
    assert dropped == 1
    assert raster.occupancy.sum() == 1


def test_rasterize_rejects_bad_intensity():
    with pytest.raises(ValueError):
        rasterize_points([(0.1, 0.1, 1.5)], GridSpec(4, 4, 0.1))
