import json

import numpy as np
import pytest
from PIL import Image

from skelrender import (
    CameraModel,
    Distortion,
    FeatureImage,
    Pose,
    RenderConfig,
    SceneFile,
    SkeletonGraph,
    load_scene,
    read_fimg,
    save_scene,
    write_fimg,
    write_preview,
)
from skelrender.errors import (
    BadChannel,
    MagicMismatch,
    ParseError,
    TruncatedPayload,
    ValidationError,
)

from conftest import centered_camera, scene_path


def random_valid_scene(rng, n_joints=4, channels=3):
    edges = [(0, 1), (1, 2), (1, 3)]
    joints = rng.normal(size=(n_joints, 3)) + np.array([0, 0, 3.0])
    graph = SkeletonGraph(
        n_joints=n_joints, edges=edges, widths=rng.uniform(0.02, 0.2, len(edges)),
        names=[f"j{k}" for k in range(n_joints)],
    )
    cfg = RenderConfig(
        alpha=float(rng.uniform(0.01, 1.0)), beta=float(rng.uniform(1.5, 3.0)),
        background=rng.normal(size=channels), width=24, height=18,
        background_min_depth=float(rng.uniform(0.5, 2.0)),
    )
    cam = centered_camera(30.0, 24, k1=float(rng.uniform(-0.1, 0.1)))
    cam_small = CameraModel(K=cam.K, dist=cam.dist, R=cam.R, t=cam.t, width=24, height=18)
    return SceneFile(
        graph=graph,
        pose=Pose(joints=joints, confidence=rng.uniform(0, 1, n_joints)),
        appearances=rng.normal(size=(len(edges), channels)),
        background=cfg.background,
        render_cfg=cfg,
        cameras={"input": cam_small},
    )


class TestSceneFile:
    def test_bundled_two_limb_fixture(self):
        scene = load_scene(scene_path("two_limb.scene"))
        assert scene.graph.n_joints == 3
        assert scene.graph.n_edges == 2
        assert "input" in scene.cameras

    def test_round_trip_is_exact(self, rng, tmp_path):
        scene = random_valid_scene(rng)
        path = tmp_path / "scene.scene"
        save_scene(scene, path)
        loaded = load_scene(path)
        assert np.array_equal(loaded.pose.joints, scene.pose.joints)
        assert np.array_equal(loaded.pose.confidence, scene.pose.confidence)
        assert np.array_equal(loaded.graph.widths, scene.graph.widths)
        assert loaded.graph.edges == scene.graph.edges
        assert loaded.graph.names == scene.graph.names
        assert np.array_equal(loaded.appearances, scene.appearances)
        assert np.array_equal(loaded.background, scene.background)
        assert loaded.render_cfg.alpha == scene.render_cfg.alpha
        assert loaded.render_cfg.beta == scene.render_cfg.beta
        assert loaded.render_cfg.background_min_depth == scene.render_cfg.background_min_depth
        cam0, cam1 = scene.cameras["input"], loaded.cameras["input"]
        assert np.array_equal(cam0.K, cam1.K)
        assert np.array_equal(cam0.R, cam1.R)
        assert np.array_equal(cam0.t, cam1.t)
        assert np.array_equal(cam0.dist.as_array(), cam1.dist.as_array())
        # Saving the loaded scene reproduces the file byte for byte.
        path2 = tmp_path / "again.scene"
        save_scene(loaded, path2)
        assert path.read_bytes() == path2.read_bytes()

    def test_edge_out_of_bounds_rejected(self, rng, tmp_path):
        scene = random_valid_scene(rng)
        path = tmp_path / "s.scene"
        save_scene(scene, path)
        doc = json.loads(path.read_text())
        doc["skeleton"]["edges"][0] = [0, scene.graph.n_joints]
        bad = tmp_path / "bad.scene"
        bad.write_text(json.dumps(doc))
        with pytest.raises(ValidationError) as exc:
            load_scene(bad)
        assert "out of joint range" in str(exc.value)

    def test_parse_error_has_location(self, tmp_path):
        bad = tmp_path / "broken.scene"
        bad.write_text('{"skeleton": [,]}')
        with pytest.raises(ParseError) as exc:
            load_scene(bad)
        assert "line" in str(exc.value)

    def test_missing_field_reported(self, tmp_path):
        bad = tmp_path / "missing.scene"
        bad.write_text('{"pose": {"joints": []}}')
        with pytest.raises(ParseError) as exc:
            load_scene(bad)
        assert "skeleton" in str(exc.value)


class TestFimg:
    def test_single_value_layout(self, tmp_path):
        img = FeatureImage(np.full((1, 1, 1), 0.5, dtype=np.float32))
        path = tmp_path / "one.fimg"
        write_fimg(img, path)
        blob = path.read_bytes()
        assert len(blob) == 24  # 20-byte header + one float32
        assert blob[:4] == b"FIMG"
        back = read_fimg(path)
        assert back.data.shape == (1, 1, 1)
        assert back.data[0, 0, 0] == np.float32(0.5)

    def test_round_trip_bit_exact(self, rng, tmp_path):
        data = rng.normal(size=(64, 64, 16)).astype(np.float32)
        path = tmp_path / "img.fimg"
        write_fimg(FeatureImage(data), path)
        back = read_fimg(path)
        assert np.array_equal(back.data, data)
        path2 = tmp_path / "img2.fimg"
        write_fimg(back, path2)
        assert path.read_bytes() == path2.read_bytes()

    def test_magic_mismatch(self, tmp_path):
        path = tmp_path / "bad.fimg"
        good = tmp_path / "good.fimg"
        write_fimg(FeatureImage(np.zeros((2, 2, 1), dtype=np.float32)), good)
        blob = bytearray(good.read_bytes())
        blob[:4] = b"JUNK"
        path.write_bytes(bytes(blob))
        with pytest.raises(MagicMismatch):
            read_fimg(path)

    def test_truncated_payload(self, tmp_path):
        good = tmp_path / "good.fimg"
        write_fimg(FeatureImage(np.zeros((4, 4, 2), dtype=np.float32)), good)
        trunc = tmp_path / "trunc.fimg"
        trunc.write_bytes(good.read_bytes()[:-5])
        with pytest.raises(TruncatedPayload):
            read_fimg(trunc)

    def test_unknown_version_rejected(self, tmp_path):
        good = tmp_path / "good.fimg"
        write_fimg(FeatureImage(np.zeros((2, 2, 1), dtype=np.float32)), good)
        blob = bytearray(good.read_bytes())
        blob[4:8] = (99).to_bytes(4, "little")
        bad = tmp_path / "versioned.fimg"
        bad.write_bytes(bytes(blob))
        with pytest.raises(ValidationError):
            read_fimg(bad)

    def test_non_finite_rejected(self, tmp_path):
        img = FeatureImage(np.full((2, 2, 1), np.nan))
        with pytest.raises(ValidationError):
            write_fimg(img, tmp_path / "nan.fimg")


class TestPreview:
    def test_lo_hi_mapping(self, tmp_path):
        lo_img = FeatureImage(np.zeros((4, 6, 3)))
        hi_img = FeatureImage(np.ones((4, 6, 3)))
        mid_img = FeatureImage(np.full((4, 6, 3), 0.5))
        for img, expected in ((lo_img, 0), (hi_img, 255), (mid_img, 128)):
            path = tmp_path / f"p{expected}.png"
            write_preview(img, path, channel_map=(0, 1, 2), lo=0.0, hi=1.0)
            arr = np.asarray(Image.open(path))
            assert arr.shape == (4, 6, 3)
            assert np.all(arr == expected)

    def test_clamps_out_of_range(self, tmp_path):
        img = FeatureImage(np.stack([np.full((2, 2), -5.0), np.full((2, 2), 7.0),
                                     np.full((2, 2), 0.25)], axis=-1))
        path = tmp_path / "clamp.png"
        write_preview(img, path)
        arr = np.asarray(Image.open(path))
        assert np.all(arr[..., 0] == 0)
        assert np.all(arr[..., 1] == 255)
        assert np.all(arr[..., 2] == 64)

    def test_bad_channel(self, tmp_path):
        img = FeatureImage(np.zeros((2, 2, 2)))
        with pytest.raises(BadChannel):
            write_preview(img, tmp_path / "bad.png", channel_map=(0, 1, 2))

    def test_replicates_single_channel(self, tmp_path):
        img = FeatureImage(np.full((2, 2, 1), 1.0))
        path = tmp_path / "gray.png"
        write_preview(img, path)
        arr = np.asarray(Image.open(path))
        assert np.all(arr == 255)
