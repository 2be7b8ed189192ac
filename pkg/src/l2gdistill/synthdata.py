"""Synthetic open-set multi-camera identity data and feature-space augmentation.

Every identity gets a prototype vector; every camera gets an orthogonal map
plus an offset.  The offset has scale ``camera_shift_scale`` and the
rotation angle is ``rotation_ratio * camera_shift_scale``, so a zero camera
scale makes all cameras identical.
An observation is ``R_c @ prototype + shift_c + noise``.  With the camera
scale above the identity spread, two views of one person from different
cameras are farther apart than two different people seen by the same
camera, which is what makes the clustering problem hard.
"""

import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .errors import ConfigError, DataError
from .numerics import seeded_rng

FORMAT_VERSION = 1


@dataclass(frozen=True)
class GeneratorConfig:
    num_identities: int = 20
    cameras: int = 4
    per_camera: int = 5
    d_raw: int = 32
    identity_spread: float = 1.0
    camera_shift_scale: float = 1.5
    noise_scale: float = 0.3
    rotation_ratio: float = 0.15
    seed: int = 0

    def validate(self):
        if self.cameras < 2:
            raise ConfigError(f"cameras: need at least 2 cameras, got {self.cameras}")
        if self.num_identities < 1:
            raise ConfigError(f"num_identities: must be >= 1, got {self.num_identities}")
        if self.per_camera < 1:
            raise ConfigError(f"per_camera: must be >= 1, got {self.per_camera}")
        if self.d_raw < 1:
            raise ConfigError(f"d_raw: must be >= 1, got {self.d_raw}")
        for name in ("identity_spread", "noise_scale"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name}: must be > 0")
        # zero is allowed: it is the degenerate "all cameras identical" case
        if self.camera_shift_scale < 0:
            raise ConfigError("camera_shift_scale: must be >= 0")
        if self.rotation_ratio < 0:
            raise ConfigError("rotation_ratio: must be >= 0")
        return self


PRESETS = {
    "hard": GeneratorConfig(),
    "easy": GeneratorConfig(camera_shift_scale=0.3),
}


@dataclass(frozen=True)
class AugmentConfig:
    """Augmentation strengths; noise terms are fractions of the data noise scale."""

    weak_noise: float = 0.01
    mask_prob: float = 0.2
    jitter: float = 0.1
    strong_noise: float = 0.05


@dataclass(frozen=True)
class Instance:
    index: int
    raw: np.ndarray
    camera: int
    true_id: int


@dataclass
class Dataset:
    raw: np.ndarray
    camera: np.ndarray
    true_id: np.ndarray
    cameras: int
    num_identities: int
    seed: int = 0
    noise_scale: float = 1.0
    stats: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.raw)

    @property
    def d_raw(self):
        return self.raw.shape[1]

    def __getitem__(self, i):
        return Instance(i, self.raw[i], int(self.camera[i]), int(self.true_id[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def unlabeled(self):
        """Training view of the data: no identity labels."""
        return UnlabeledData(raw=self.raw, camera=self.camera, noise_scale=self.noise_scale)


@dataclass(frozen=True)
class UnlabeledData:
    raw: np.ndarray
    camera: np.ndarray
    noise_scale: float = 1.0

    def __len__(self):
        return len(self.raw)


def _camera_rotation(rng, d, scale):
    g = rng.standard_normal((d, d))
    skew = (g - g.T) / np.sqrt(2.0 * d)
    return expm(scale * skew)


def generate(cfg):
    """Draw a dataset from ``cfg``; ``dataset.stats`` holds the distance self-check."""
    cfg.validate()
    rng = seeded_rng(cfg.seed)
    d = cfg.d_raw
    prototypes = cfg.identity_spread * rng.standard_normal((cfg.num_identities, d))
    rotations = [_camera_rotation(rng, d, cfg.rotation_ratio * cfg.camera_shift_scale) for _ in range(cfg.cameras)]
    offsets = cfg.camera_shift_scale * rng.standard_normal((cfg.cameras, d))

    raw, camera, true_id = [], [], []
    for pid in range(cfg.num_identities):
        for c in range(cfg.cameras):
            base = rotations[c] @ prototypes[pid] + offsets[c]
            noise = cfg.noise_scale * rng.standard_normal((cfg.per_camera, d))
            raw.append(base + noise)
            camera.extend([c] * cfg.per_camera)
            true_id.extend([pid] * cfg.per_camera)
    ds = Dataset(
        raw=np.vstack(raw),
        camera=np.asarray(camera, dtype=np.int64),
        true_id=np.asarray(true_id, dtype=np.int64),
        cameras=cfg.cameras,
        num_identities=cfg.num_identities,
        seed=cfg.seed,
        noise_scale=cfg.noise_scale,
    )
    ds.stats = distance_order_stats(ds)
    return ds


def distance_order_stats(ds):
    """Brute-force mean raw distances for the two pair families that matter.

    ``cross_camera_intra_id``: same identity, different cameras.
    ``same_camera_inter_id``: different identities, same camera.
    """
    diff = ds.raw[:, None, :] - ds.raw[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    same_id = ds.true_id[:, None] == ds.true_id[None, :]
    same_cam = ds.camera[:, None] == ds.camera[None, :]
    cross = dist[same_id & ~same_cam]
    inter = dist[~same_id & same_cam]
    stats = {
        "cross_camera_intra_id": float(cross.mean()) if cross.size else float("nan"),
        "same_camera_inter_id": float(inter.mean()) if inter.size else float("nan"),
    }
    stats["hard"] = bool(stats["cross_camera_intra_id"] > stats["same_camera_inter_id"])
    return stats


def augment_weak(raw, rng, scale):
    """Additive Gaussian noise with standard deviation ``scale``."""
    raw = np.asarray(raw, dtype=np.float64)
    if scale == 0:
        return raw.copy()
    return raw + scale * rng.standard_normal(raw.shape)


def augment_strong(raw, rng, mask_prob=0.2, jitter=0.1, noise=0.0):
    """Random coordinate masking, multiplicative jitter, then additive noise."""
    raw = np.asarray(raw, dtype=np.float64)
    out = raw.copy()
    if mask_prob > 0:
        out[rng.random(raw.shape) < mask_prob] = 0.0
    if jitter > 0:
        out *= rng.uniform(1.0 - jitter, 1.0 + jitter, size=raw.shape)
    if noise > 0:
        out += noise * rng.standard_normal(raw.shape)
    return out


def save_dataset(ds, path, config=None):
    header = {
        "format_version": FORMAT_VERSION,
        "d_raw": ds.d_raw,
        "cameras": ds.cameras,
        "num_identities": ds.num_identities,
        "seed": ds.seed,
        "noise_scale": ds.noise_scale,
        "stats": ds.stats,
    }
    if config is not None:
        header["config"] = config
    with open(path, "w") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for inst in ds:
            rec = {
                "index": inst.index,
                "camera": inst.camera,
                "true_id": inst.true_id,
                "raw": [float(x) for x in inst.raw],
            }
            fh.write(json.dumps(rec) + "\n")


def load_dataset(path):
    try:
        with open(path) as fh:
            lines = [ln for ln in fh if ln.strip()]
    except OSError as exc:
        raise DataError(f"cannot read dataset {path}: {exc}") from exc
    if not lines:
        raise DataError(f"{path}: empty dataset file")
    try:
        header = json.loads(lines[0])
        records = [json.loads(ln) for ln in lines[1:]]
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: malformed record: {exc}") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported format_version {header.get('format_version')}")
    records.sort(key=lambda r: r["index"])
    if [r["index"] for r in records] != list(range(len(records))):
        raise DataError(f"{path}: instance indices must be 0..N-1 without gaps")
    raw = np.array([r["raw"] for r in records], dtype=np.float64)
    if raw.ndim != 2 or raw.shape[1] != header["d_raw"]:
        raise DataError(f"{path}: raw vectors do not match d_raw={header['d_raw']}")
    ds = Dataset(
        raw=raw,
        camera=np.array([r["camera"] for r in records], dtype=np.int64),
        true_id=np.array([r["true_id"] for r in records], dtype=np.int64),
        cameras=header["cameras"],
        num_identities=header["num_identities"],
        seed=header.get("seed", 0),
        noise_scale=header.get("noise_scale", 1.0),
        stats=header.get("stats", {}),
    )
    if ds.camera.max(initial=0) >= ds.cameras or ds.true_id.max(initial=0) >= ds.num_identities:
        raise DataError(f"{path}: camera or identity out of range")
    return ds


def config_dict(cfg):
    return dataclasses.asdict(cfg)
