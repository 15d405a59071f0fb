"""Scene and feature-image file formats.

Scene files are JSON: human-readable nested key/value blocks with explicit
arrays. Floats are serialized with Python's shortest round-trip
representation, so save -> load reproduces every numeric field exactly.

Feature images use the FIMG container: magic "FIMG", then little-endian
u32 version, height, width, channels, then height*width*channels float32
values, row-major with the channel axis fastest.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .camera import CameraModel, Distortion
from .errors import (
    BadChannel,
    MagicMismatch,
    ParseError,
    TruncatedPayload,
    ValidationError,
)
from .renderer import FeatureImage, RenderConfig
from .skeleton import Pose, SkeletonGraph

FIMG_MAGIC = b"FIMG"
FIMG_VERSION = 1


@dataclass
class SceneFile:
    """Everything needed to render one subject: skeleton, pose, appearances,
    background, render configuration, and a named camera map."""

    graph: SkeletonGraph
    pose: Pose
    appearances: np.ndarray  # (M, A)
    background: np.ndarray  # (A,)
    render_cfg: RenderConfig
    cameras: dict = field(default_factory=dict)

    def __post_init__(self):
        self.appearances = np.asarray(self.appearances, dtype=float)
        self.background = np.asarray(self.background, dtype=float).reshape(-1)

    def validate(self) -> list[str]:
        problems = []
        problems += self.graph.validate()
        problems += self.pose.validate()
        if self.pose.n_joints != self.graph.n_joints:
            problems.append(
                f"pose has {self.pose.n_joints} joints, skeleton has {self.graph.n_joints}"
            )
        if self.appearances.ndim != 2 or self.appearances.shape[0] != self.graph.n_edges:
            problems.append(
                f"appearances shape {self.appearances.shape} does not match "
                f"{self.graph.n_edges} edges"
            )
        elif not np.all(np.isfinite(self.appearances)):
            problems.append("appearances must be finite")
        if self.appearances.ndim == 2 and self.background.shape[0] != self.appearances.shape[1]:
            problems.append("background dimension differs from appearance dimension")
        problems += self.render_cfg.validate()
        if self.render_cfg.channels != self.background.shape[0]:
            problems.append("render config channels differ from background length")
        if not self.cameras:
            problems.append("scene needs at least one camera")
        for name, cam in self.cameras.items():
            for p in cam.validate():
                problems.append(f"camera {name!r}: {p}")
        return problems

    def require_valid(self) -> "SceneFile":
        problems = self.validate()
        if problems:
            raise ValidationError(problems)
        return self


def _field(mapping, key, context):
    if key not in mapping:
        raise ParseError(f"missing field {key!r} in {context}")
    return mapping[key]


def _camera_from_dict(d, name):
    ctx = f"camera {name!r}"
    K = np.asarray(_field(d, "K", ctx), dtype=float)
    if K.size != 9:
        raise ParseError(f"{ctx}: K must hold 9 values")
    dist = Distortion.from_array(_field(d, "dist", ctx))
    R = np.asarray(_field(d, "R", ctx), dtype=float)
    if R.size != 9:
        raise ParseError(f"{ctx}: R must hold 9 values")
    t = np.asarray(_field(d, "t", ctx), dtype=float)
    if t.size != 3:
        raise ParseError(f"{ctx}: t must hold 3 values")
    return CameraModel(
        K=K.reshape(3, 3),
        dist=dist,
        R=R.reshape(3, 3),
        t=t,
        width=int(_field(d, "width", ctx)),
        height=int(_field(d, "height", ctx)),
    )


def _camera_to_dict(cam: CameraModel):
    return {
        "K": [float(v) for v in cam.K.reshape(-1)],
        "dist": [float(v) for v in cam.dist.as_array()],
        "R": [float(v) for v in cam.R.reshape(-1)],
        "t": [float(v) for v in cam.t],
        "width": cam.width,
        "height": cam.height,
    }


def scene_from_dict(doc: dict) -> SceneFile:
    sk = _field(doc, "skeleton", "scene")
    graph = SkeletonGraph(
        n_joints=int(_field(sk, "n_joints", "skeleton")),
        edges=[tuple(e) for e in _field(sk, "edges", "skeleton")],
        widths=_field(sk, "widths", "skeleton"),
        names=sk.get("names"),
    )
    pose_doc = _field(doc, "pose", "scene")
    pose = Pose(
        joints=_field(pose_doc, "joints", "pose"),
        confidence=pose_doc.get("confidence"),
    )
    render_doc = _field(doc, "render", "scene")
    background = np.asarray(_field(doc, "background", "scene"), dtype=float)
    cfg = RenderConfig(
        alpha=float(_field(render_doc, "alpha", "render")),
        beta=float(_field(render_doc, "beta", "render")),
        background=background,
        width=int(_field(render_doc, "width", "render")),
        height=int(_field(render_doc, "height", "render")),
        background_min_depth=float(render_doc.get("background_min_depth", 1.0)),
    )
    channels = int(render_doc.get("channels", background.shape[0]))
    if channels != background.shape[0]:
        raise ParseError(
            f"render.channels = {channels} but background holds {background.shape[0]} values"
        )
    cameras = {
        str(name): _camera_from_dict(cam_doc, name)
        for name, cam_doc in _field(doc, "cameras", "scene").items()
    }
    scene = SceneFile(
        graph=graph,
        pose=pose,
        appearances=np.asarray(_field(doc, "appearances", "scene"), dtype=float),
        background=background,
        render_cfg=cfg,
        cameras=cameras,
    )
    return scene


def scene_to_dict(scene: SceneFile) -> dict:
    doc = {
        "skeleton": {
            "n_joints": scene.graph.n_joints,
            "edges": [[i, j] for i, j in scene.graph.edges],
            "widths": [float(w) for w in scene.graph.widths],
        },
        "pose": {
            "joints": [[float(v) for v in row] for row in scene.pose.joints],
            "confidence": [float(c) for c in scene.pose.confidence],
        },
        "appearances": [[float(v) for v in row] for row in scene.appearances],
        "background": [float(v) for v in scene.background],
        "render": {
            "alpha": float(scene.render_cfg.alpha),
            "beta": float(scene.render_cfg.beta),
            "channels": scene.render_cfg.channels,
            "width": scene.render_cfg.width,
            "height": scene.render_cfg.height,
            "background_min_depth": float(scene.render_cfg.background_min_depth),
        },
        "cameras": {name: _camera_to_dict(cam) for name, cam in scene.cameras.items()},
    }
    if scene.graph.names is not None:
        doc["skeleton"]["names"] = list(scene.graph.names)
    return doc


def load_scene(path) -> SceneFile:
    """Parse and validate a scene file. ParseError carries line/field
    context; ValidationError lists every violated invariant."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    scene = scene_from_dict(doc)
    scene.require_valid()
    return scene


def save_scene(scene: SceneFile, path) -> None:
    scene.require_valid()
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(scene_to_dict(scene), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_fimg(img: FeatureImage, path) -> None:
    """Serialize a feature image; values are stored as float32."""
    data = np.asarray(img.data)
    if not np.all(np.isfinite(data)):
        raise ValidationError("feature image values must be finite")
    h, w, a = data.shape
    with open(path, "wb") as fh:
        fh.write(FIMG_MAGIC)
        fh.write(struct.pack("<IIII", FIMG_VERSION, h, w, a))
        fh.write(np.ascontiguousarray(data, dtype="<f4").tobytes())


def read_fimg(path) -> FeatureImage:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != FIMG_MAGIC:
        raise MagicMismatch(f"{path}: expected magic {FIMG_MAGIC!r}, got {blob[:4]!r}")
    if len(blob) < 20:
        raise TruncatedPayload(f"{path}: header truncated at {len(blob)} bytes")
    version, h, w, a = struct.unpack("<IIII", blob[4:20])
    if version != FIMG_VERSION:
        raise ValidationError(f"{path}: unsupported FIMG version {version}")
    expected = 4 * h * w * a
    payload = blob[20:]
    if len(payload) != expected:
        raise TruncatedPayload(
            f"{path}: payload holds {len(payload)} bytes, expected {expected}"
        )
    data = np.frombuffer(payload, dtype="<f4").reshape(h, w, a)
    if not np.all(np.isfinite(data)):
        raise ValidationError(f"{path}: payload contains non-finite values")
    return FeatureImage(data=data.copy())


def write_preview(
    img: FeatureImage,
    path,
    channel_map=None,
    lo: float = 0.0,
    hi: float = 1.0,
) -> None:
    """8-bit RGB preview of three channels, mapping [lo, hi] to [0, 255]
    with clamping. Rounds half away from zero. When the image has fewer than
    three channels the default map replicates channel 0."""
    data = np.asarray(img.data, dtype=float)
    a = data.shape[2]
    if channel_map is None:
        channel_map = (0, 1, 2) if a >= 3 else (0, 0, 0)
    channel_map = tuple(int(c) for c in channel_map)
    if len(channel_map) != 3:
        raise BadChannel("channel_map must name exactly three channels")
    for c in channel_map:
        if not (0 <= c < a):
            raise BadChannel(f"channel {c} out of range for {a}-channel image")
    if not (hi > lo):
        raise ValidationError("preview requires lo < hi")
    rgb = data[:, :, list(channel_map)]
    scaled = np.clip((rgb - lo) / (hi - lo), 0.0, 1.0) * 255.0
    bytes8 = np.floor(scaled + 0.5).astype(np.uint8)
    Image.fromarray(bytes8, mode="RGB").save(path)
