import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from streamstab.errors import DegenerateFitError, InvalidInputError
from streamstab.flow import FlowField, flow_from_transform
from streamstab.geometry import (
    RigidParams,
    apply_rigid,
    compose_params,
    fit_homography,
    fit_rigid,
    frame_center,
    invert_params,
    matrix_to_params,
    params_to_matrix,
    warp_with_flow,
)

from conftest import textured_frame


def rand_params(rng, theta_max=math.radians(30), t_max=50.0):
    return RigidParams(
        float(rng.uniform(-theta_max, theta_max)),
        float(rng.uniform(-t_max, t_max)),
        float(rng.uniform(-t_max, t_max)),
    )


class TestParamsToMatrix:
    def test_identity(self):
        m = params_to_matrix(RigidParams(0, 0, 0), (64, 64))
        assert np.allclose(m, np.eye(3))

    def test_pure_translation(self):
        m = params_to_matrix(RigidParams(0, 5, -3), (100, 100))
        expected = np.eye(3)
        expected[0, 2] = 5
        expected[1, 2] = -3
        assert np.allclose(m, expected)

    def test_quarter_turn_about_center(self):
        # Center-relative (1, 0) must land on center-relative (0, 1).
        m = params_to_matrix(RigidParams(math.pi / 2 - 1e-9, 0, 0), (101, 101))
        cx, cy = frame_center((101, 101))
        pt = m @ np.array([cx + 1, cy, 1.0])
        assert np.allclose(pt[:2], [cx, cy + 1], atol=1e-6)

    def test_center_is_fixed_point_of_rotation(self):
        m = params_to_matrix(RigidParams(0.3, 0, 0), (64, 48))
        cx, cy = frame_center((64, 48))
        pt = m @ np.array([cx, cy, 1.0])
        assert np.allclose(pt[:2], [cx, cy], atol=1e-12)

    def test_non_finite_rejected(self):
        with pytest.raises(InvalidInputError):
            params_to_matrix(RigidParams(float("nan"), 0, 0), (64, 64))


class TestInvertCompose:
    def test_identity(self):
        assert invert_params(RigidParams(0, 0, 0)) == RigidParams(0, 0, 0)

    def test_translation_negates(self):
        p = invert_params(RigidParams(0, 5, -3))
        assert p == RigidParams(0, -5, 3)

    @settings(max_examples=50, deadline=None)
    @given(
        theta=st.floats(-0.5, 0.5),
        tx=st.floats(-50, 50),
        ty=st.floats(-50, 50),
    )
    def test_matrix_product_is_identity(self, theta, tx, ty):
        p = RigidParams(theta, tx, ty)
        m = params_to_matrix(p, (64, 64)) @ params_to_matrix(invert_params(p), (64, 64))
        assert np.abs(m - np.eye(3)).max() < 1e-9

    def test_compose_matches_matrix_product(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            p1, p2 = rand_params(rng), rand_params(rng)
            m = params_to_matrix(p2, (64, 64)) @ params_to_matrix(p1, (64, 64))
            pc = compose_params(p1, p2)
            assert np.abs(params_to_matrix(pc, (64, 64)) - m).max() < 1e-9

    def test_matrix_to_params_round_trip(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            p = rand_params(rng)
            m = params_to_matrix(p, (80, 60))
            q = matrix_to_params(m, (80, 60))
            assert abs(p.theta - q.theta) < 1e-12
            assert abs(p.tx - q.tx) < 1e-9
            assert abs(p.ty - q.ty) < 1e-9


class TestApplyRigid:
    def test_identity_exact(self, frame128):
        out, mask = apply_rigid(frame128, RigidParams(0, 0, 0))
        assert np.array_equal(out, frame128)
        assert np.array_equal(mask, np.ones(frame128.shape[:2], dtype=np.float32))

    def test_translation_matches_index_shift(self, frame128):
        out, mask = apply_rigid(frame128, RigidParams(0, 10, 0))
        # Content moves +10 in x: out[:, 10:] == frame[:, :-10]
        assert np.abs(out[:, 10:] - frame128[:, :-10]).max() < 1e-5
        assert np.all(mask[:, :10] < 1e-6)
        assert np.all(mask[:, 10:] > 0.999)

    def test_round_trip_interior(self, frame128):
        from scipy import ndimage

        from streamstab.geometry import warp_affine

        p = RigidParams(math.radians(5), 6.0, -4.0)
        once, m1 = apply_rigid(frame128, p)
        back, m2 = apply_rigid(once, invert_params(p))
        # Carry the first warp's mask into the final coordinate system.
        m1_back, _ = warp_affine(m1, params_to_matrix(invert_params(p), (128, 128)))
        both = np.minimum(m1_back, m2)
        # Erode by 2px so interpolation at mask borders is excluded.
        interior = ndimage.binary_erosion(both > 0.999, iterations=2)
        diff = np.abs(back - frame128).max(axis=2)
        assert diff[interior].max() < 0.02

    def test_composition_property(self, frame128):
        from scipy import ndimage

        from streamstab.geometry import warp_affine

        p1 = RigidParams(0.05, 4.0, -3.0)
        p2 = RigidParams(-0.04, -2.0, 5.0)
        inner, m1 = apply_rigid(frame128, p1)
        twice, m2 = apply_rigid(inner, p2)
        direct, md = apply_rigid(frame128, compose_params(p1, p2))
        m1_fwd, _ = warp_affine(m1, params_to_matrix(p2, (128, 128)))
        valid = ndimage.binary_erosion(
            (np.minimum(np.minimum(m1_fwd, m2), md) > 0.999), iterations=2
        )
        diff = np.abs(twice - direct).max(axis=2)
        assert diff[valid].max() < 0.03

    def test_mask_monotone_in_translation(self, frame128):
        areas = []
        for t in (0, 5, 10, 20):
            _, mask = apply_rigid(frame128, RigidParams(0, t, 0))
            areas.append(mask.sum())
        assert all(a >= b for a, b in zip(areas, areas[1:]))


class TestWarpWithFlow:
    def test_zero_flow_identity(self, frame128):
        h, w = frame128.shape[:2]
        flow = FlowField.zero((64, 64), (w, h))
        out, mask = warp_with_flow(frame128, flow)
        assert np.abs(out - frame128).max() < 1e-6
        assert mask.min() > 0.999

    def test_constant_flow_equals_translation(self, frame128):
        h, w = frame128.shape[:2]
        vec = np.zeros((h, w, 2), dtype=np.float32)
        vec[:, :, 0] = 4.0
        flow = FlowField(vec, (w, h))
        out, mask = warp_with_flow(frame128, flow)
        ref, mref = apply_rigid(frame128, RigidParams(0, -4, 0))
        both = np.minimum(mask, mref) > 0.999
        assert np.abs(out - ref).max(axis=2)[both].max() < 0.02

    def test_low_res_flow_is_rescaled(self):
        frame = textured_frame(256, seed=2)
        vec = np.ones((64, 64, 2), dtype=np.float32)
        vec[:, :, 1] = 0.0
        flow = FlowField(vec, (64, 64))
        out, _ = warp_with_flow(frame, flow)
        ref, mref = apply_rigid(frame, RigidParams(0, -4, 0))
        interior = mref > 0.999
        diff = np.abs(out - ref).max(axis=2)
        assert np.median(diff[interior]) < 0.02

    def test_flow_sampled_from_transform_matches_apply_rigid(self, frame128):
        p = RigidParams(math.radians(3), 5.0, -2.0)
        h, w = frame128.shape[:2]
        inv = params_to_matrix(invert_params(p), (w, h))
        flow = flow_from_transform(inv, (w, h), (w, h))
        out, mask = warp_with_flow(frame128, flow)
        ref, mref = apply_rigid(frame128, p)
        both = np.minimum(mask, mref) > 0.999
        assert np.abs(out - ref).max(axis=2)[both].max() < 0.02

    def test_aspect_mismatch_rejected(self, frame128):
        flow = FlowField.zero((64, 32), (64, 32))
        with pytest.raises(InvalidInputError):
            warp_with_flow(frame128, flow)


class TestFitRigid:
    def synth_pairs(self, p, n=60, size=(128, 128), seed=0):
        rng = np.random.default_rng(seed)
        src = rng.uniform(8, 120, size=(n, 2))
        m = params_to_matrix(p, size)
        dst = (m @ np.c_[src, np.ones(n)].T).T[:, :2]
        return src, dst

    def test_noiseless_recovery(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            p = rand_params(rng, theta_max=math.radians(30), t_max=50)
            src, dst = self.synth_pairs(p, seed=int(rng.integers(1 << 30)))
            q = fit_rigid(src, dst, center=frame_center((128, 128)))
            assert abs(q.theta - p.theta) < 1e-6
            assert abs(q.tx - p.tx) < 1e-4
            assert abs(q.ty - p.ty) < 1e-4

    def test_identity_points(self):
        src = np.array([[1.0, 2.0], [30.0, 4.0], [10.0, 60.0]])
        q = fit_rigid(src, src, center=(63.5, 63.5))
        assert q.theta == pytest.approx(0, abs=1e-12)
        assert q.tx == pytest.approx(0, abs=1e-9)
        assert q.ty == pytest.approx(0, abs=1e-9)

    def test_noisy_recovery(self):
        p = RigidParams(math.radians(10), 20.0, -15.0)
        src, dst = self.synth_pairs(p, n=100, seed=42)
        rng = np.random.default_rng(1234)
        dst = dst + rng.normal(0, 0.5, size=dst.shape)
        q = fit_rigid(src, dst, center=frame_center((128, 128)))
        assert abs(q.tx - p.tx) < 0.2
        assert abs(q.ty - p.ty) < 0.2

    def test_degenerate(self):
        with pytest.raises(DegenerateFitError):
            fit_rigid(np.array([[1.0, 1.0]]), np.array([[2.0, 2.0]]), center=(0, 0))
        with pytest.raises(DegenerateFitError):
            fit_rigid(
                np.array([[1.0, 1.0], [1.0, 1.0]]),
                np.array([[2.0, 2.0], [3.0, 3.0]]),
                center=(0, 0),
            )


class TestFitHomography:
    def test_identity(self):
        pts = np.array([[0.0, 0.0], [100.0, 0.0], [0.0, 100.0], [100.0, 100.0], [40.0, 70.0]])
        h = fit_homography(pts, pts)
        assert np.abs(h - np.eye(3)).max() < 1e-9

    def test_rigid_correspondences(self):
        p = RigidParams(math.radians(12), 8.0, -5.0)
        m = params_to_matrix(p, (128, 128))
        rng = np.random.default_rng(2)
        src = rng.uniform(0, 127, size=(40, 2))
        dst = (m @ np.c_[src, np.ones(40)].T).T[:, :2]
        h = fit_homography(src, dst)
        r = np.array([[math.cos(p.theta), -math.sin(p.theta)], [math.sin(p.theta), math.cos(p.theta)]])
        assert np.abs(h[:2, :2] - r).max() < 1e-6
        assert np.abs(h[2, :2]).max() < 1e-6

    def test_affine_scale_recovered(self):
        rng = np.random.default_rng(8)
        src = rng.uniform(0, 127, size=(50, 2))
        a = 1.2 * np.array([[math.cos(0.2), -math.sin(0.2)], [math.sin(0.2), math.cos(0.2)]])
        dst = src @ a.T + np.array([3.0, -2.0])
        h = fit_homography(src, dst)
        sv = np.linalg.svd(h[:2, :2], compute_uv=False)
        assert np.abs(sv - 1.2).max() < 1e-4

    def test_degenerate_collinear(self):
        src = np.array([[float(i), float(i)] for i in range(6)])
        with pytest.raises(DegenerateFitError):
            fit_homography(src, src + 1.0)
