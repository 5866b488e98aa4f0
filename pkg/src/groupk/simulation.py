"""Seeded generation of simulated range-SLAM worlds and benchmark hypergraphs.

Reproducibility: every generator draws from numpy's PCG64 via explicit
``SeedSequence(seed, stream)`` children, one stream per purpose (trajectory,
measurement noise, outlier corruption), so datasets are byte-identical for a
fixed seed on any platform.

Defaults the underlying experiments do not pin down are documented here:
steps are 1 m; Manhattan worlds turn +-90 degrees with probability 0.4 per
step; beacons and outlier means are drawn uniformly over the trajectory
bounding box inflated by 20% plus a 2 m pad; half of the corrupted
measurements come in clusters of ``outlier_cluster_size`` consecutive
measurements of one beacon that share a random false-beacon point, the other
half are singles with an independent random point each.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .geometry import Beacon, OdometryMeasurement, Pose2, RangeMeasurement, between, compose
from .hypergraph import Hypergraph

DATASET_FORMAT_VERSION = 1
_SIGMA_FLOOR = 1e-6  # measurement types require strictly positive sigmas

_STREAM_TRAJECTORY = 0
_STREAM_NOISE = 1
_STREAM_OUTLIERS = 2


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(stream,)))


@dataclass
class WorldConfig:
    trajectory_kind: str = "manhattan"  # manhattan | circle | line
    pose_count: int = 100
    beacon_count: int = 1
    range_sigma: float = 0.5
    odom_sigma: tuple[float, float, float] = (0.02, 0.02, 0.004)
    outlier_fraction: float = 0.0
    outlier_cluster_size: int = 5
    seed: int = 0
    known_association: bool = True

    def __post_init__(self) -> None:
        if self.trajectory_kind not in ("manhattan", "circle", "line"):
            raise ValueError(f"unknown trajectory kind {self.trajectory_kind!r}")
        if self.pose_count < 4:
            raise ValueError("group-4 checks need at least 4 poses")
        if self.beacon_count < 1:
            raise ValueError("need at least one beacon")
        if not 0.0 <= self.outlier_fraction < 1.0:
            raise ValueError("outlier fraction must be in [0, 1)")
        if self.outlier_cluster_size < 1:
            raise ValueError("outlier cluster size must be positive")


@dataclass
class Dataset:
    config: WorldConfig
    poses: list[Pose2]  # ground truth
    beacons: list[Beacon]  # ground truth
    odometry: list[OdometryMeasurement]  # noisy
    ranges: list[RangeMeasurement]  # pose-major, beacon-minor order
    inlier_mask: list[bool]

    @property
    def measurement_count(self) -> int:
        return len(self.ranges)

    def truth_values(self):
        return [b.position.copy() for b in self.beacons]


# ---------------------------------------------------------------------------
# Trajectories and worlds.
# ---------------------------------------------------------------------------

_MANHATTAN_TURN_PROB = 0.4  # split evenly between left and right


def _true_deltas(cfg: WorldConfig, rng: np.random.Generator) -> list[Pose2]:
    steps = cfg.pose_count - 1
    if cfg.trajectory_kind == "line":
        return [Pose2(1.0, 0.0, 0.0) for _ in range(steps)]
    if cfg.trajectory_kind == "circle":
        turn = 2.0 * math.pi / steps if steps else 0.0
        return [Pose2(1.0, 0.0, turn) for _ in range(steps)]
    draws = rng.random(steps)
    deltas = []
    for u in draws:
        if u < _MANHATTAN_TURN_PROB / 2:
            turn = math.pi / 2
        elif u < _MANHATTAN_TURN_PROB:
            turn = -math.pi / 2
        else:
            turn = 0.0
        deltas.append(Pose2(1.0, 0.0, turn))
    return deltas


def _bounding_box(points: np.ndarray, inflate: float = 0.2, pad: float = 2.0) -> tuple[np.ndarray, np.ndarray]:
    lo = points.min(axis=0)
    hi = points.max(axis=0)
    extra = inflate * (hi - lo) + pad
    return lo - extra, hi + extra


def generate_world(cfg: WorldConfig) -> Dataset:
    """Simulate a world: trajectory, beacons, noisy odometry and ranges.

    One range measurement per pose per beacon; exactly
    ``round(outlier_fraction * count)`` measurements are corrupted.
    """
    rng_traj = _rng(cfg.seed, _STREAM_TRAJECTORY)
    rng_noise = _rng(cfg.seed, _STREAM_NOISE)
    rng_out = _rng(cfg.seed, _STREAM_OUTLIERS)

    deltas = _true_deltas(cfg, rng_traj)
    poses = [Pose2()]
    for d in deltas:
        poses.append(compose(poses[-1], d))
    positions = np.array([[p.x, p.y] for p in poses])
    # Beacons live in the traveled region (good trilateration geometry);
    # outlier fake points draw from the wider inflated box further below.
    blo, bhi = _bounding_box(positions, inflate=0.1, pad=1.0)
    lo, hi = _bounding_box(positions)
    beacons = [
        Beacon(i, blo + rng_traj.random(2) * (bhi - blo)) for i in range(cfg.beacon_count)
    ]

    odo_sigma = np.maximum(np.asarray(cfg.odom_sigma, dtype=float), _SIGMA_FLOOR)
    odo_cov = np.diag(odo_sigma**2)
    odometry = []
    for i, d in enumerate(deltas):
        noise = rng_noise.normal(0.0, 1.0, 3) * np.where(
            np.asarray(cfg.odom_sigma) > 0, np.asarray(cfg.odom_sigma), 0.0
        )
        noisy = Pose2(d.x + noise[0], d.y + noise[1], d.theta + noise[2])
        odometry.append(OdometryMeasurement(i, i + 1, noisy, odo_cov))

    sigma = max(cfg.range_sigma, _SIGMA_FLOOR)
    ranges: list[RangeMeasurement] = []
    true_dist = []
    for pose_id in range(cfg.pose_count):
        for b in beacons:
            dist = float(np.linalg.norm(positions[pose_id] - b.position))
            noise = rng_noise.normal(0.0, cfg.range_sigma) if cfg.range_sigma > 0 else 0.0
            ranges.append(
                RangeMeasurement(
                    pose_id=pose_id,
                    beacon_id=b.id,
                    value=max(dist + noise, 1e-3),
                    sigma=sigma,
                )
            )
            true_dist.append(dist)

    total = len(ranges)
    n_out = round(cfg.outlier_fraction * total)
    inlier_mask = [True] * total
    if n_out > total:
        raise ValueError("more outliers requested than measurements exist")
    if n_out:
        corrupted = _choose_outliers(cfg, rng_out, total)
        if sum(len(group) for group in corrupted) != n_out:
            raise ValueError("could not place the requested outliers")
        for group in corrupted:
            point = lo + rng_out.random(2) * (hi - lo)
            for idx in group:
                pose_id = ranges[idx].pose_id
                dist = float(np.linalg.norm(positions[pose_id] - point))
                noise = rng_out.normal(0.0, cfg.range_sigma) if cfg.range_sigma > 0 else 0.0
                ranges[idx] = RangeMeasurement(
                    pose_id=pose_id,
                    beacon_id=ranges[idx].beacon_id,
                    value=max(dist + noise, 1e-3),
                    sigma=sigma,
                )
                inlier_mask[idx] = False
    return Dataset(cfg, poses, beacons, odometry, ranges, inlier_mask)


def _choose_outliers(
    cfg: WorldConfig, rng: np.random.Generator, total: int
) -> list[list[int]]:
    """Pick indices to corrupt: clustered runs first, then singles.

    Returns groups of measurement indices; each group shares one random
    false-beacon point.  Clusters are runs of consecutive measurements of one
    beacon (stride = beacon count in the pose-major stream).
    """
    n_out = round(cfg.outlier_fraction * total)
    size = cfg.outlier_cluster_size
    n_clusters = (n_out // 2) // size
    taken: set[int] = set()
    groups: list[list[int]] = []
    stride = cfg.beacon_count
    per_beacon = cfg.pose_count
    for _ in range(n_clusters):
        placed = False
        for _ in range(1000):
            beacon = int(rng.integers(cfg.beacon_count))
            start = int(rng.integers(per_beacon - size + 1))
            run = [(start + j) * stride + beacon for j in range(size)]
            if not taken.intersection(run):
                taken.update(run)
                groups.append(run)
                placed = True
                break
        if not placed:
            raise ValueError("could not place outlier clusters; config infeasible")
    n_singles = n_out - n_clusters * size
    free = [i for i in range(total) if i not in taken]
    if n_singles > len(free):
        raise ValueError("could not place single outliers; config infeasible")
    singles = rng.choice(len(free), size=n_singles, replace=False)
    groups.extend([[free[int(i)]] for i in sorted(singles)])
    return groups


# ---------------------------------------------------------------------------
# Planted-clique hypergraphs.
# ---------------------------------------------------------------------------


@dataclass
class PlantedGraphConfig:
    k: int
    n: int
    density: float
    planted_clique_size: int
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.density <= 1.0:
            raise ValueError("density must be in [0, 1]")
        if self.planted_clique_size > self.n:
            raise ValueError("planted clique cannot exceed the vertex count")


def planted_vertices(cfg: PlantedGraphConfig) -> tuple[int, ...]:
    """The deterministic planted vertex set for a config (a seeded sample)."""
    rng = _rng(cfg.seed, _STREAM_TRAJECTORY)
    return tuple(sorted(rng.choice(cfg.n, size=cfg.planted_clique_size, replace=False).tolist()))


def generate_planted_hypergraph(cfg: PlantedGraphConfig) -> Hypergraph:
    """Random k-uniform graph containing a planted clique at a target density.

    All C(s, k) clique edges are inserted, then uniformly random extra edges
    until the total reaches ``round(density * C(n, k))`` exactly.
    """
    total_target = round(cfg.density * math.comb(cfg.n, cfg.k))
    planted = planted_vertices(cfg)
    base = math.comb(len(planted), cfg.k)
    if total_target < base:
        raise ValueError(
            f"density {cfg.density} gives {total_target} edges, below the "
            f"{base} edges of the planted clique"
        )
    g = Hypergraph(cfg.k, cfg.n)
    for e in itertools.combinations(planted, cfg.k):
        g.add_edge(e)
    rng = _rng(cfg.seed, _STREAM_NOISE)
    while g.n_edges < total_target:
        # batched rejection sampling; duplicates just bounce off the edge set
        want = total_target - g.n_edges
        draw = rng.integers(0, cfg.n, size=(max(2 * want, 64), cfg.k))
        draw = draw[np.all(np.diff(np.sort(draw, axis=1), axis=1) > 0, axis=1)]
        for row in draw:
            g.add_edge(row.tolist())
            if g.n_edges == total_target:
                break
    return g


# ---------------------------------------------------------------------------
# Dataset serialization (bit-exact round trip).
# ---------------------------------------------------------------------------


def dataset_to_json(ds: Dataset) -> str:
    doc = {
        "version": DATASET_FORMAT_VERSION,
        "config": asdict(ds.config),
        "poses": [[p.x, p.y, p.theta] for p in ds.poses],
        "beacons": [{"id": b.id, "position": b.position.tolist()} for b in ds.beacons],
        "odometry": [
            {
                "from": o.from_id,
                "to": o.to_id,
                "delta": [o.delta.x, o.delta.y, o.delta.theta],
                "covariance": o.covariance.tolist(),
            }
            for o in ds.odometry
        ],
        "ranges": [
            {
                "pose_id": r.pose_id,
                "beacon_id": r.beacon_id,
                "value": r.value,
                "sigma": r.sigma,
                "is_true_inlier": inl,
            }
            for r, inl in zip(ds.ranges, ds.inlier_mask)
        ],
    }
    return json.dumps(doc, indent=1, sort_keys=True)


def dataset_from_json(text: str) -> Dataset:
    doc = json.loads(text)
    if doc.get("version") != DATASET_FORMAT_VERSION:
        raise ValueError(f"unsupported dataset version {doc.get('version')!r}")
    cfg_raw = dict(doc["config"])
    cfg_raw["odom_sigma"] = tuple(cfg_raw["odom_sigma"])
    cfg = WorldConfig(**cfg_raw)
    poses = [Pose2(*row) for row in doc["poses"]]
    beacons = [Beacon(b["id"], np.array(b["position"])) for b in doc["beacons"]]
    odometry = [
        OdometryMeasurement(
            o["from"], o["to"], Pose2(*o["delta"]), np.array(o["covariance"])
        )
        for o in doc["odometry"]
    ]
    ranges = []
    mask = []
    for r in doc["ranges"]:
        ranges.append(
            RangeMeasurement(
                pose_id=r["pose_id"],
                beacon_id=r["beacon_id"],
                value=r["value"],
                sigma=r["sigma"],
            )
        )
        mask.append(bool(r["is_true_inlier"]))
    return Dataset(cfg, poses, beacons, odometry, ranges, mask)


def save_dataset(ds: Dataset, path: str) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(dataset_to_json(ds))
        fh.write("\n")


def load_dataset(path: str) -> Dataset:
    with open(path, "r", encoding="ascii") as fh:
        return dataset_from_json(fh.read())


def true_odometry(ds: Dataset) -> list[OdometryMeasurement]:
    """Noise-free odometry recomputed from ground truth (for oracles/tests)."""
    out = []
    for i in range(len(ds.poses) - 1):
        out.append(
            OdometryMeasurement(
                i, i + 1, between(ds.poses[i], ds.poses[i + 1]), np.eye(3) * _SIGMA_FLOOR**2
            )
        )
    return out
