import numpy as np
import pytest

from skelrender import (
    CameraModel,
    Distortion,
    distort,
    make_rays,
    orbit_cameras,
    pixel_to_ray_coords,
    project,
    transfer_pose,
    undistort,
)
from skelrender.camera import look_at
from skelrender.errors import BehindCamera, NoConvergence, ValidationError

from conftest import centered_camera, random_rotation


class TestDistort:
    def test_zero_coefficients_identity(self):
        p = np.array([0.3, -0.2])
        assert np.array_equal(distort(p, Distortion()), p)

    def test_radial_hand_value(self):
        out = distort(np.array([0.5, 0.0]), Distortion(k1=0.1))
        assert out[0] == pytest.approx(0.5125, abs=1e-15)
        assert out[1] == 0.0

    def test_center_fixed_point(self):
        d = Distortion(k1=0.3, k2=-0.1, p1=0.05, p2=-0.02, k3=0.01)
        assert np.array_equal(distort(np.zeros(2), d), np.zeros(2))


class TestUndistort:
    def test_zero_coefficients_passthrough(self):
        p = np.array([0.4, 0.1])
        assert np.array_equal(undistort(p, Distortion(), iters=1), p)

    def test_inverse_of_radial_example(self):
        q = undistort(np.array([0.5125, 0.0]), Distortion(k1=0.1))
        assert np.allclose(q, [0.5, 0.0], atol=1e-8)

    def test_round_trip_mild_coefficients(self, rng):
        d = Distortion(k1=-0.12, k2=0.03, p1=0.004, p2=-0.006, k3=0.01)
        for _ in range(200):
            q0 = rng.uniform(-0.8, 0.8, size=2)
            if np.linalg.norm(q0) > 0.8:
                q0 *= 0.8 / np.linalg.norm(q0)
            q = undistort(distort(q0, d), d)
            assert np.max(np.abs(q - q0)) <= 1e-8

    def test_forward_residual_contract_full_budget(self, rng):
        # All five coefficients up to |0.2|: the model can lose injectivity
        # (tangential ~0.18 at radius ~0.7 admits two exact preimages) and
        # the fixed point can cycle, so each draw must either satisfy the
        # forward-residual contract or raise the documented NoConvergence.
        converged = 0
        for _ in range(50):
            coeffs = rng.uniform(-0.2, 0.2, size=5)
            d = Distortion(*coeffs)
            q0 = rng.uniform(-0.57, 0.57, size=2)
            p = distort(q0, d)
            try:
                q = undistort(p, d, iters=120, tol=1e-10)
            except NoConvergence:
                continue
            assert np.max(np.abs(distort(q, d) - p)) <= 1e-10
            converged += 1
        assert converged >= 45

    def test_round_trip_identity_on_invertible_range(self, rng):
        # Identity within 1e-8 on the |p| <= 0.8 disk where the model stays
        # injective: radial up to |0.2|, tangential up to |0.05|.
        for _ in range(100):
            d = Distortion(
                k1=rng.uniform(-0.2, 0.2),
                k2=rng.uniform(-0.2, 0.2),
                p1=rng.uniform(-0.05, 0.05),
                p2=rng.uniform(-0.05, 0.05),
                k3=rng.uniform(-0.2, 0.2),
            )
            q0 = rng.uniform(-0.57, 0.57, size=2)
            q = undistort(distort(q0, d), d, iters=120, tol=1e-10)
            assert np.max(np.abs(q - q0)) <= 1e-8

    def test_no_convergence_raises(self):
        with pytest.raises(NoConvergence):
            undistort(np.array([2.0, 2.0]), Distortion(k1=2.0), iters=5, tol=1e-12)


class TestMakeRaysAndProject:
    def test_principal_ray(self):
        K = np.array([[50.0, 0, 16.5], [0, 50.0, 16.5], [0, 0, 1]])
        cam = CameraModel(K=K, width=33, height=33)
        grid = make_rays(cam)
        assert np.allclose(grid.directions[16, 16], [0.0, 0.0, 1.0], atol=1e-15)
        assert grid.valid.all()

    def test_unit_norm_and_forward_facing(self):
        cam = centered_camera(40.0, 32, k1=-0.05)
        grid = make_rays(cam)
        norms = np.linalg.norm(grid.directions, axis=-1)
        assert np.max(np.abs(norms - 1.0)) <= 1e-10
        assert np.all(grid.directions[..., 2] > 0)

    @pytest.mark.parametrize("z", [0.5, 1.0, 10.0])
    @pytest.mark.parametrize("k1", [0.0, -0.05, 0.2])
    def test_project_ray_round_trip(self, z, k1):
        cam = centered_camera(64.0, 64, k1=k1)
        grid = make_rays(cam)
        pix = project(z * grid.directions, cam)
        jj, ii = np.meshgrid(np.arange(64, dtype=float), np.arange(64, dtype=float))
        expected = np.stack([jj + 0.5, ii + 0.5], axis=-1)
        assert np.max(np.abs(pix - expected)) <= 1e-6

    def test_project_on_axis_point(self):
        cam = centered_camera(64.0, 64)
        assert np.allclose(project(np.array([0.0, 0.0, 2.0]), cam), [32.0, 32.0], atol=1e-12)

    def test_projective_invariance(self, rng):
        cam = centered_camera(48.0, 64, k1=0.02)
        for _ in range(20):
            P = np.array([rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(0.5, 5)])
            s = rng.uniform(0.1, 10)
            assert np.max(np.abs(project(P, cam) - project(s * P, cam))) <= 1e-9

    def test_behind_camera(self):
        cam = centered_camera(64.0, 64)
        with pytest.raises(BehindCamera):
            project(np.array([0.0, 0.0, -1.0]), cam)

    def test_pixel_to_ray_coords_inverts_project(self, rng):
        cam = centered_camera(40.0, 32, k1=-0.08)
        pts = np.column_stack([
            rng.uniform(-0.5, 0.5, 30),
            rng.uniform(-0.5, 0.5, 30),
            rng.uniform(1.0, 5.0, 30),
        ])
        rc = pixel_to_ray_coords(project(pts, cam), cam)
        assert np.max(np.abs(rc - pts[:, :2] / pts[:, 2:3])) <= 1e-8


class TestTransferPose:
    def test_identity(self):
        J = np.array([[1.0, 2.0, 3.0], [0.0, 0.5, 2.0]])
        assert np.array_equal(transfer_pose(J, np.eye(3), np.zeros(3)), J)

    def test_pure_translation(self):
        out = transfer_pose(np.array([[1.0, 2.0, 3.0]]), np.eye(3), np.array([0.0, 0, 1]))
        assert np.allclose(out, [[1.0, 2.0, 4.0]], atol=1e-15)

    def test_inverse_composition(self, rng):
        J = rng.normal(size=(7, 3))
        R = random_rotation(rng)
        t = rng.normal(size=3)
        back = transfer_pose(transfer_pose(J, R, t), R.T, -R.T @ t)
        assert np.max(np.abs(back - J)) <= 1e-10

    def test_preserves_pairwise_distances(self, rng):
        J = rng.normal(size=(6, 3))
        R = random_rotation(rng)
        t = rng.normal(size=3)
        J2 = transfer_pose(J, R, t)
        d1 = np.linalg.norm(J[:, None] - J[None, :], axis=-1)
        d2 = np.linalg.norm(J2[:, None] - J2[None, :], axis=-1)
        assert np.max(np.abs(d1 - d2)) <= 1e-10


class TestOrbit:
    def test_single_camera_looks_at_center(self):
        template = centered_camera(64.0, 64)
        center = np.array([0.2, -0.1, 3.0])
        (cam,) = orbit_cameras(center, radius=2.5, elevation=0.0, n_frames=1, template=template)
        cam_center = -cam.R.T @ cam.t
        assert np.linalg.norm(cam_center - center) == pytest.approx(2.5, abs=1e-9)
        pix = project(cam.to_camera(center), cam)
        assert np.max(np.abs(pix - [32.0, 32.0])) <= 1e-6

    def test_even_azimuth_spacing(self):
        template = centered_camera(64.0, 64)
        center = np.zeros(3)
        cams = orbit_cameras(center, radius=2.0, elevation=0.1, n_frames=4, template=template)
        centers = [-c.R.T @ c.t for c in cams]
        for c in centers:
            assert np.linalg.norm(c - center) == pytest.approx(2.0, abs=1e-9)
        horiz = [np.array([c[0], c[2]]) for c in centers]
        for a, b in zip(horiz, horiz[1:] + horiz[:1]):
            cosang = (a @ b) / (np.linalg.norm(a) * np.linalg.norm(b))
            assert cosang == pytest.approx(0.0, abs=1e-9)

    def test_rotations_valid_over_random_parameters(self, rng):
        template = centered_camera(64.0, 64)
        for _ in range(50):
            center = rng.normal(size=3)
            cams = orbit_cameras(
                center,
                radius=rng.uniform(0.5, 10),
                elevation=rng.uniform(-1.4, 1.4),
                n_frames=int(rng.integers(1, 7)),
                template=template,
            )
            for cam in cams:
                assert np.max(np.abs(cam.R.T @ cam.R - np.eye(3))) <= 1e-9
                assert abs(np.linalg.det(cam.R) - 1.0) <= 1e-9

    def test_degenerate_top_view(self):
        R, t = look_at(np.array([0.0, -5.0, 0.0]), np.zeros(3))
        assert np.max(np.abs(R.T @ R - np.eye(3))) <= 1e-12
        assert abs(np.linalg.det(R) - 1.0) <= 1e-12

    def test_bad_radius(self):
        with pytest.raises(ValidationError):
            orbit_cameras(np.zeros(3), radius=0.0, elevation=0.0, n_frames=1,
                          template=centered_camera(64.0, 64))
