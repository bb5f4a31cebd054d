"""Deterministic multi-representation synthetic world.

Every scene is a smooth latent field plus a texture field, both value noise
seeded by ``(master_seed, scene_id)``. All representations are deterministic
functions of those fields, so a consistent joint labelling always exists.
"""

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import ndtr

from .graph import NodeSpec
from .tensor import read_tensor, write_tensor

REPRESENTATIONS = ("rgb", "depth", "normals_c", "normals_w", "semseg", "wireframe", "halftone", "pose")
SENSORS = ("rgb",)

# 4x4 Bayer matrix, thresholds in (0, 1)
BAYER4 = (np.array([[0, 8, 2, 10], [12, 4, 14, 6], [3, 11, 1, 9], [15, 7, 13, 5]]) + 0.5) / 16.0

_LATENT_STD = 0.487  # empirical std of the default 3-octave value noise, so ndtr() is near uniform
_WORLD_TILT = math.radians(30.0)
_GROUND_SAMPLE = 2.0  # meters per pixel for pose positions


@dataclass
class WorldConfig:
    height: int = 32
    width: int = 32
    octaves: tuple = (1, 2, 4)
    persistence: float = 0.5
    texture_octaves: tuple = (4, 8)
    n_classes: int = 12
    rgb_noise: float = 0.04
    normal_gain: float = 20.0
    depth_normal_gain: float = 0.3
    seed: int = 0

    def __post_init__(self):
        self.octaves = tuple(self.octaves)
        self.texture_octaves = tuple(self.texture_octaves)
        if self.height < 8 or self.width < 8:
            raise ValueError("grid extents must be >= 8")
        if self.n_classes < 2:
            raise ValueError("n_classes must be >= 2")


@dataclass
class SplitPlan:
    """Scene counts per split. Ids are assigned as consecutive disjoint ranges."""

    train: int = 800
    validation: int = 200
    unlabeled: tuple = (1000, 1000)
    evaluation: int = 1000

    def __post_init__(self):
        self.unlabeled = tuple(self.unlabeled)
        if min(self.train, self.validation, self.evaluation, *self.unlabeled, 1) < 1:
            raise ValueError("every split needs at least one scene")

    def ranges(self):
        names = ["train", "validation"] + [f"unlabeled_{i + 1}" for i in range(len(self.unlabeled))] + ["evaluation"]
        counts = [self.train, self.validation, *self.unlabeled, self.evaluation]
        out, lo = {}, 0
        for n, c in zip(names, counts):
            out[n] = list(range(lo, lo + c))
            lo += c
        return out


@dataclass
class Scene:
    scene_id: int
    latent: np.ndarray
    layers: dict = field(default_factory=dict)


def world_nodes(config):
    """Node specs for the seven representations plus the rgb sensor."""
    C = config.n_classes
    return [
        NodeSpec("rgb", "RGB", "continuous", 3, "intensity", sensor=True),
        NodeSpec("depth", "Depth", "continuous", 1, "meters"),
        NodeSpec("normals_c", "Surface Normals (C)", "continuous", 3, "direction"),
        NodeSpec("normals_w", "Surface Normals (W)", "continuous", 3, "direction"),
        NodeSpec("semseg", "Semantic Segmentation", "categorical", C, "class"),
        NodeSpec("wireframe", "Wireframe", "categorical", 2, "class"),
        NodeSpec("halftone", "Halftone", "categorical", 2, "class"),
        NodeSpec("pose", "Pose", "vector", 6, "pose"),
    ]


def value_noise(rng, height, width, cells):
    """Smoothstep-interpolated lattice noise in [-1, 1]."""
    lat = rng.uniform(-1.0, 1.0, size=(cells + 1, cells + 1))
    y = (np.arange(height) + 0.5) * cells / height
    x = (np.arange(width) + 0.5) * cells / width
    iy, ix = np.floor(y).astype(int), np.floor(x).astype(int)
    fy, fx = y - iy, x - ix
    fy = fy * fy * (3 - 2 * fy)
    fx = fx * fx * (3 - 2 * fx)
    a, b = lat[iy][:, ix], lat[iy][:, ix + 1]
    c, d = lat[iy + 1][:, ix], lat[iy + 1][:, ix + 1]
    top = a + (b - a) * fx[None, :]
    bot = c + (d - c) * fx[None, :]
    return top + (bot - top) * fy[:, None]


def _fractal(rng, config, octaves):
    out = np.zeros((config.height, config.width))
    amp = 1.0
    for cells in octaves:
        out += amp * value_noise(rng, config.height, config.width, cells)
        amp *= config.persistence
    return out


def depth_from_latent(z):
    """Strictly increasing map from latent in [0, 1] to meters."""
    return 2.0 + 30.0 * z + 10.0 * z**2


def _normals(field_, gain):
    gy, gx = np.gradient(field_)
    n = np.stack([-gain * gx, -gain * gy, np.ones_like(gx)], axis=-1)
    return n / np.linalg.norm(n, axis=-1, keepdims=True)


def boundary_map(labels):
    """1 where some in-image 4-neighbour has a lower label.

    Each band boundary is marked on its upper side only, which keeps the map
    sparse on small grids.
    """
    b = np.zeros(labels.shape, dtype=bool)
    lab = labels.astype(np.int64)
    b[1:, :] |= lab[1:, :] > lab[:-1, :]
    b[:-1, :] |= lab[:-1, :] > lab[1:, :]
    b[:, 1:] |= lab[:, 1:] > lab[:, :-1]
    b[:, :-1] |= lab[:, :-1] > lab[:, 1:]
    return b.astype(np.uint16)


def generate_scene(config, scene_id):
    rng = np.random.default_rng([config.seed, scene_id])
    z = ndtr(_fractal(rng, config, config.octaves) / _LATENT_STD)
    w = 0.5 + 0.5 * np.tanh(_fractal(rng, config, config.texture_octaves) / 0.5)
    noise = rng.normal(0.0, config.rgb_noise, size=(config.height, config.width, 3))

    rgb = np.stack(
        [
            0.15 + 0.7 * z,
            0.5 + 0.3 * np.cos(math.pi * z) * (0.4 + w),
            0.2 + 0.6 * w,
        ],
        axis=-1,
    ) + noise

    depth = depth_from_latent(z)
    n_c = _normals(z, config.normal_gain)
    n_d = _normals(depth, config.depth_normal_gain)
    ct, st = math.cos(_WORLD_TILT), math.sin(_WORLD_TILT)
    rot = np.array([[1, 0, 0], [0, ct, -st], [0, st, ct]])
    n_w = n_d @ rot.T

    C = config.n_classes
    seg = np.minimum((z * C).astype(np.int64), C - 1).astype(np.uint16)
    wire = boundary_map(seg)
    gray = rgb.mean(axis=-1)
    H, W = config.height, config.width
    thresh = BAYER4[np.arange(H)[:, None] % 4, np.arange(W)[None, :] % 4]
    halftone = (gray > thresh).astype(np.uint16)

    ys, xs = np.mgrid[0:H, 0:W] * _GROUND_SAMPLE
    gy, gx = np.gradient(z)
    pose = np.array(
        [
            depth.mean(),
            (z * xs).sum() / z.sum(),
            (z * ys).sum() / z.sum(),
            math.degrees(math.atan(config.normal_gain * gx.mean())),
            math.degrees(math.atan(config.normal_gain * gy.mean())),
            100.0 * z.std(),
        ]
    )
    layers = {
        "rgb": rgb.astype(np.float32),
        "depth": depth[..., None].astype(np.float32),
        "normals_c": n_c.astype(np.float32),
        "normals_w": n_w.astype(np.float32),
        "semseg": seg,
        "wireframe": wire,
        "halftone": halftone,
        "pose": pose.astype(np.float32),
    }
    return Scene(scene_id, z, layers)


def generate_layers(config, scene_ids, reps=REPRESENTATIONS):
    """Stack the requested representations over ``scene_ids``."""
    scenes = [generate_scene(config, s).layers for s in scene_ids]
    return {r: np.stack([sc[r] for sc in scenes]) for r in reps}


# -- dataset files ------------------------------------------------------------


class SealedAccessError(PermissionError):
    pass


class AuditLog:
    """Line-oriented record of ``<usage> <scene_id>`` pairs."""

    def __init__(self, path=None):
        self.path = Path(path) if path else None
        self.lines = []

    def record(self, scene_ids, usage):
        new = [f"{usage} {int(s)}" for s in scene_ids]
        self.lines.extend(new)
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a") as fh:
                fh.write("\n".join(new) + "\n")

    @staticmethod
    def read(path):
        out = []
        for line in Path(path).read_text().splitlines():
            if line.strip():
                usage, sid = line.rsplit(" ", 1)
                out.append((usage, int(sid)))
        return out


def make_dataset(config, out_dir, plan=None):
    """Write every split as stacked NGCT files plus ``manifest.json``.

    Labeled splits ship all representations. Unlabeled and evaluation splits ship
    only sensors; their ground truth goes under ``sealed/``.
    """
    plan = plan or SplitPlan()
    out_dir = Path(out_dir)
    manifest_path = out_dir / "manifest.json"
    if manifest_path.exists():
        raise FileExistsError(f"{manifest_path} already exists")
    ranges = plan.ranges()
    seen = set()
    for ids in ranges.values():
        if seen & set(ids):
            raise ValueError("split id ranges overlap")
        seen |= set(ids)

    splits = {}
    for name, ids in ranges.items():
        labeled = name in ("train", "validation")
        layers = generate_layers(config, ids)
        files, sealed = {}, {}
        for rep, arr in layers.items():
            if labeled or rep in SENSORS:
                rel = f"{name}/{rep}.ngct"
                files[rep] = rel
            else:
                rel = f"sealed/{name}/{rep}.ngct"
                sealed[rep] = rel
            write_tensor(out_dir / rel, arr)
        splits[name] = {"scene_ids": ids, "labeled": labeled, "files": files, "sealed": sealed}
    manifest = {"world": asdict(config), "plan": asdict(plan), "splits": splits}
    manifest_path.write_text(json.dumps(manifest, indent=1))
    return manifest


def read_manifest(root):
    return json.loads((Path(root) / "manifest.json").read_text())


def _is_sealed(path):
    return "sealed" in Path(path).parts


class Dataset:
    """Training-side view of a dataset directory. Never opens ``sealed/``."""

    def __init__(self, root, audit=None):
        self.root = Path(root)
        self.manifest = read_manifest(root)
        self.world = WorldConfig(**self.manifest["world"])
        self.audit = audit if audit is not None else AuditLog()

    def scene_ids(self, split):
        return list(self.manifest["splits"][split]["scene_ids"])

    def _open(self, rel):
        if _is_sealed(rel):
            raise SealedAccessError(f"training code may not open sealed file {rel}")
        return read_tensor(self.root / rel)

    def load(self, split, reps, usage):
        entry = self.manifest["splits"][split]
        missing = [r for r in reps if r not in entry["files"]]
        if missing:
            raise KeyError(f"split {split!r} has no representation(s) {missing}")
        out = {r: self._open(entry["files"][r]) for r in reps}
        self.audit.record(entry["scene_ids"], usage)
        return out


def load_sealed(root, split, reps, audit=None):
    """Ground truth for evaluation tooling only."""
    root = Path(root)
    entry = read_manifest(root)["splits"][split]
    out = {}
    for r in reps:
        rel = entry["sealed"].get(r) or entry["files"].get(r)
        if rel is None:
            raise KeyError(f"split {split!r} has no representation {r!r}")
        out[r] = read_tensor(root / rel)
    if audit is not None:
        audit.record(entry["scene_ids"], f"evaluate:{split}")
    return out
