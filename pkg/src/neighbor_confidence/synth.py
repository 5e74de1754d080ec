"""Synthetic point-cloud corpora and the Chamfer reconstruction metric.

A point cloud is an ``(N, 3)`` float64 array. Surface sampling per family
(``u`` draws are uniform doubles on [0, 1), consumed in the order listed,
one point at a time, followed by three Gaussian noise draws when
``noise_sigma > 0``):

sphere
    Radius ``scales[0]``; the other two scales are validated but unused.
    ``z = 2u - 1``, ``phi = 2 pi u``, point ``r (sqrt(1-z^2) cos phi, sqrt(1-z^2) sin phi, z)``.
    Uniform by Archimedes' hat-box theorem.
ellipsoid
    The sphere construction with unit radius, then multiplied per axis by
    the three semi-axes ``scales``.
box
    Axis-aligned box with side lengths ``scales`` centered at the origin.
    One draw picks a face with probability proportional to its area
    (order: -x, +x, -y, +y, -z, +z), two draws place the point on it.
cylinder
    Unit-radius cylinder along z with ``z`` in [-1, 1] (lateral area 4 pi,
    caps pi each). One draw picks lateral/bottom/top by area, then the
    lateral surface uses ``phi, z`` and a cap uses ``rho = sqrt(u), phi``.
    The result is multiplied per axis by ``scales`` (x radius, y radius,
    half height).

The ellipsoid and cylinder are area-uniform in the canonical frame, before
the per-axis scaling.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .errors import DataError, FormatError, ParameterError, UnsupportedVersionError
from .rng import MASK64, Xoshiro256, derive_seed

FAMILIES = ("sphere", "ellipsoid", "box", "cylinder")
SPLITS = ("train", "new")

CORPUS_MAGIC = b"NCPC"
CORPUS_VERSION = 1


@dataclass(frozen=True)
class ShapeSpec:
    family: str
    scales: tuple[float, float, float]
    noise_sigma: float
    seed: int

    def validate(self) -> None:
        if self.family not in FAMILIES:
            raise ParameterError(f"unknown shape family {self.family!r}")
        if len(self.scales) != 3:
            raise ParameterError("scales must have exactly three entries")
        for s in self.scales:
            if not (math.isfinite(s) and s > 0):
                raise ParameterError(f"scale parameters must be positive, got {self.scales}")
        if not (math.isfinite(self.noise_sigma) and self.noise_sigma >= 0):
            raise ParameterError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if not 0 <= self.seed <= MASK64:
            raise ParameterError("seed must be a 64-bit unsigned integer")


def _unit_sphere(rng: Xoshiro256) -> tuple[float, float, float]:
    z = 2.0 * rng.random() - 1.0
    phi = 2.0 * math.pi * rng.random()
    rho = math.sqrt(max(0.0, 1.0 - z * z))
    return rho * math.cos(phi), rho * math.sin(phi), z


def _box_point(rng: Xoshiro256, sx: float, sy: float, sz: float) -> tuple[float, float, float]:
    areas = (sy * sz, sy * sz, sx * sz, sx * sz, sx * sy, sx * sy)
    pick = rng.random() * sum(areas)
    face = 5
    acc = 0.0
    for i, a in enumerate(areas):
        acc += a
        if pick < acc:
            face = i
            break
    u = rng.random() - 0.5
    v = rng.random() - 0.5
    sign = 0.5 if face % 2 else -0.5
    if face < 2:
        return sign * sx, u * sy, v * sz
    if face < 4:
        return u * sx, sign * sy, v * sz
    return u * sx, v * sy, sign * sz


def _cylinder_point(rng: Xoshiro256) -> tuple[float, float, float]:
    pick = rng.random() * 6.0
    if pick < 4.0:
        phi = 2.0 * math.pi * rng.random()
        z = 2.0 * rng.random() - 1.0
        return math.cos(phi), math.sin(phi), z
    rho = math.sqrt(rng.random())
    phi = 2.0 * math.pi * rng.random()
    z = -1.0 if pick < 5.0 else 1.0
    return rho * math.cos(phi), rho * math.sin(phi), z


def generate_cloud(spec: ShapeSpec, n_points: int) -> np.ndarray:
    """Sample ``n_points`` points on the surface described by ``spec``."""
    spec.validate()
    if n_points < 1:
        raise ParameterError(f"n_points must be >= 1, got {n_points}")
    rng = Xoshiro256(spec.seed)
    sx, sy, sz = (float(s) for s in spec.scales)
    sigma = float(spec.noise_sigma)
    out = np.empty((n_points, 3), dtype=np.float64)
    for i in range(n_points):
        if spec.family == "sphere":
            x, y, z = _unit_sphere(rng)
            p = (sx * x, sx * y, sx * z)
        elif spec.family == "ellipsoid":
            x, y, z = _unit_sphere(rng)
            p = (sx * x, sy * y, sz * z)
        elif spec.family == "box":
            p = _box_point(rng, sx, sy, sz)
        else:
            x, y, z = _cylinder_point(rng)
            p = (sx * x, sy * y, sz * z)
        if sigma > 0:
            p = (p[0] + sigma * rng.normal(), p[1] + sigma * rng.normal(), p[2] + sigma * rng.normal())
        out[i] = p
    return out


def normalize_cloud(cloud: np.ndarray) -> np.ndarray:
    """Center at the centroid and scale so the farthest point has norm 1."""
    pts = np.asarray(cloud, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 1:
        raise ParameterError(f"expected an (N, 3) cloud with N >= 1, got shape {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise DataError("cloud contains non-finite coordinates")
    centered = pts - pts.mean(axis=0)
    # second centering pass removes the rounding residue of the first
    centered = centered - centered.mean(axis=0)
    radius = float(np.sqrt((centered * centered).sum(axis=1)).max())
    if radius == 0.0:
        return centered
    return centered / radius


def _as_cloud(cloud, name: str) -> np.ndarray:
    pts = np.asarray(cloud, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ParameterError(f"{name}: expected an (N, 3) cloud, got shape {pts.shape}")
    if pts.shape[0] == 0:
        raise ParameterError(f"{name}: empty point cloud")
    return pts


def chamfer_from_minima(min_ab: np.ndarray, min_ba: np.ndarray) -> float:
    return float(min_ab.sum() / min_ab.shape[-1] + min_ba.sum() / min_ba.shape[-1])


def chamfer_distance(a, b) -> float:
    """Mean squared nearest-neighbor distance, summed over both directions."""
    pa = _as_cloud(a, "a")
    pb = _as_cloud(b, "b")
    min_ab, _, min_ba, _ = kernels.chamfer_nn(pa[None], pb[None])
    return chamfer_from_minima(min_ab[0], min_ba[0])


# ---------------------------------------------------------------------------
# corpora


@dataclass
class CorpusSpec:
    n_points: int = 64
    noise_sigma: float = 0.01
    seed: int = 0
    train: dict[str, int] = field(default_factory=lambda: {"sphere": 200, "ellipsoid": 200})
    new: dict[str, int] = field(
        default_factory=lambda: {"sphere": 50, "ellipsoid": 50, "box": 50, "cylinder": 50}
    )

    def validate(self) -> None:
        if self.n_points < 1:
            raise ParameterError("corpus.n_points must be >= 1")
        if not (math.isfinite(self.noise_sigma) and self.noise_sigma >= 0):
            raise ParameterError("corpus.noise_sigma must be >= 0")
        for split in SPLITS:
            for fam, count in getattr(self, split).items():
                if fam not in FAMILIES:
                    raise ParameterError(f"corpus.{split}: unknown family {fam!r}")
                if count < 0:
                    raise ParameterError(f"corpus.{split}.{fam}: count must be >= 0")
        if sum(self.train.values()) + sum(self.new.values()) == 0:
            raise ParameterError("corpus has no clouds")


def sample_scales(family: str, rng: Xoshiro256) -> tuple[float, float, float]:
    """Corpus scale distribution: near-round in-distribution shapes, OoD shapes
    with strongly varying aspect ratios."""
    if family == "sphere":
        r = rng.uniform(0.5, 1.5)
        return (r, r, r)
    if family == "ellipsoid":
        return (rng.uniform(0.8, 1.2), rng.uniform(0.8, 1.2), rng.uniform(0.8, 1.2))
    if family == "box":
        return (rng.uniform(0.3, 2.0), rng.uniform(0.3, 2.0), rng.uniform(0.3, 2.0))
    r = rng.uniform(0.2, 1.0)
    return (r, r, rng.uniform(0.2, 2.0))


def corpus_shape_specs(spec: CorpusSpec) -> list[tuple[int, int, ShapeSpec]]:
    """Per-cloud ``(id, split_code, ShapeSpec)`` in id order.

    Ids run consecutively over the train split then the new split, families in
    the order given in the config.
    """
    spec.validate()
    out = []
    cloud_id = 0
    for split_code, split in enumerate(SPLITS):
        for fam, count in getattr(spec, split).items():
            for _ in range(count):
                scales = sample_scales(fam, Xoshiro256(derive_seed(spec.seed, cloud_id, 1)))
                shape = ShapeSpec(fam, scales, spec.noise_sigma, derive_seed(spec.seed, cloud_id, 2))
                out.append((cloud_id, split_code, shape))
                cloud_id += 1
    return out


@dataclass
class Corpus:
    ids: np.ndarray  # uint64
    splits: np.ndarray  # uint8, 0=train 1=new
    clouds: np.ndarray  # (n_clouds, n_points, 3), raw (not normalized)
    families: list[str] | None = None

    @property
    def n_points(self) -> int:
        return int(self.clouds.shape[1])

    def __len__(self) -> int:
        return int(self.ids.shape[0])

    def normalized(self) -> np.ndarray:
        return np.stack([normalize_cloud(c) for c in self.clouds])

    def split_mask(self, split: str) -> np.ndarray:
        return self.splits == SPLITS.index(split)


def generate_corpus(spec: CorpusSpec) -> tuple[Corpus, list[ShapeSpec]]:
    entries = corpus_shape_specs(spec)
    clouds = np.stack([generate_cloud(s, spec.n_points) for _, _, s in entries])
    corpus = Corpus(
        ids=np.array([i for i, _, _ in entries], dtype=np.uint64),
        splits=np.array([c for _, c, _ in entries], dtype=np.uint8),
        clouds=clouds,
        families=[s.family for _, _, s in entries],
    )
    return corpus, [s for _, _, s in entries]


def write_corpus(path, corpus: Corpus) -> None:
    n, npts, _ = corpus.clouds.shape
    parts = [CORPUS_MAGIC, struct.pack("<III", CORPUS_VERSION, n, npts)]
    for cid, split, cloud in zip(corpus.ids, corpus.splits, corpus.clouds):
        parts.append(struct.pack("<QB", int(cid), int(split)))
        parts.append(np.ascontiguousarray(cloud, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_corpus(path) -> Corpus:
    data = Path(path).read_bytes()
    if len(data) < 16:
        raise FormatError(f"{path}: truncated corpus header")
    if data[:4] != CORPUS_MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r}, expected {CORPUS_MAGIC!r}")
    version, n, npts = struct.unpack_from("<III", data, 4)
    if version != CORPUS_VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported corpus version {version}")
    rec = 9 + 24 * npts
    if len(data) != 16 + n * rec:
        raise FormatError(f"{path}: expected {16 + n * rec} bytes for {n} clouds, found {len(data)}")
    ids = np.empty(n, dtype=np.uint64)
    splits = np.empty(n, dtype=np.uint8)
    clouds = np.empty((n, npts, 3), dtype=np.float64)
    off = 16
    for i in range(n):
        ids[i], splits[i] = struct.unpack_from("<QB", data, off)
        if splits[i] > 1:
            raise FormatError(f"{path}: cloud {int(ids[i])} has invalid split code {int(splits[i])}")
        clouds[i] = np.frombuffer(data, dtype="<f8", count=3 * npts, offset=off + 9).reshape(npts, 3)
        off += rec
    if len(set(ids.tolist())) != n:
        raise FormatError(f"{path}: duplicate cloud ids")
    return Corpus(ids=ids, splits=splits, clouds=clouds)


def write_manifest(path, corpus: Corpus, specs: list[ShapeSpec]) -> None:
    rows = [
        {
            "id": int(cid),
            "split": SPLITS[int(sp)],
            "family": s.family,
            "scales": list(s.scales),
            "noise_sigma": s.noise_sigma,
            "seed": s.seed,
        }
        for cid, sp, s in zip(corpus.ids, corpus.splits, specs)
    ]
    Path(path).write_text(json.dumps({"clouds": rows}, indent=1) + "\n")
