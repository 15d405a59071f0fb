import os
import sys

sys.path.insert(0, os.path.dirname(__file__))

import numpy as np
import pytest

from skelrender import (
    ActiveBlocks,
    CameraModel,
    Distortion,
    ParamVector,
    RenderConfig,
    SkeletonGraph,
)

SCENES_DIR = os.path.join(os.path.dirname(__file__), "..", "scenes")


def scene_path(name):
    return os.path.join(SCENES_DIR, name)


def centered_camera(f, size, k1=0.0, R=None, t=None):
    K = np.array([[f, 0.0, size / 2.0], [0.0, f, size / 2.0], [0.0, 0.0, 1.0]])
    return CameraModel(
        K=K,
        dist=Distortion(k1=k1),
        R=np.eye(3) if R is None else R,
        t=np.zeros(3) if t is None else t,
        width=size,
        height=size,
    )


def random_rotation(rng):
    """Uniform-ish random rotation from QR of a Gaussian matrix."""
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def random_spd(rng, eig_lo=1e-2, eig_hi=10.0):
    R = random_rotation(rng)
    eig = rng.uniform(eig_lo, eig_hi, size=3)
    return (R * eig) @ R.T


def random_scene(rng, n_joints=5, n_edges=4, channels=3, size=32, alpha=0.1,
                 fov_f=None, k1=0.0, depth=3.0, spread=0.5, width_lo=0.04,
                 width_hi=0.09):
    """A generic random scene: joints scattered around a point in front of
    the camera, a random spanning-tree-ish edge set, random appearances."""
    joints = np.zeros((n_joints, 3))
    joints[:, 0] = rng.uniform(-spread, spread, n_joints)
    joints[:, 1] = rng.uniform(-spread, spread, n_joints)
    joints[:, 2] = depth + rng.uniform(-spread / 2, spread / 2, n_joints)
    edges = []
    seen = set()
    while len(edges) < n_edges:
        i = int(rng.integers(0, n_joints))
        j = int(rng.integers(0, n_joints))
        key = (min(i, j), max(i, j))
        if i != j and key not in seen:
            seen.add(key)
            edges.append((i, j))
    widths = rng.uniform(width_lo, width_hi, n_edges)
    graph = SkeletonGraph(n_joints=n_joints, edges=edges, widths=widths)
    apps = rng.uniform(0.0, 1.0, (n_edges, channels))
    background = rng.uniform(0.0, 0.2, channels)
    cam = centered_camera(fov_f if fov_f else size * 1.2, size, k1=k1)
    cfg = RenderConfig(alpha=alpha, beta=2.0, background=background, width=size, height=size)
    params = ParamVector(
        joints=joints,
        widths=widths,
        appearances=apps,
        background=background,
        active=ActiveBlocks(joints=True, widths=True, appearances=True, background=True),
    )
    return graph, params, cam, cfg


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
