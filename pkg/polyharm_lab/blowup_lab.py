"""Blow-ups of polynomial harmonic measures at the origin, rescaled zero sets and
nodal domains of spherical harmonics on S^2."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.spatial import cKDTree

from polyharm_lab import reports
from polyharm_lab.harmonic_poly import Poly
from polyharm_lab.measure_engine import PolyMeasure, ball_measure
from polyharm_lab.metric_lab import f_r_distance
from polyharm_lab.particle_measure import (
    ParticleMeasure,
    cast_centers,
    discretize,
    pushforward,
)
from polyharm_lab.roots import find_ray_roots
from polyharm_lab.sphere_quad import SphereRule

logger = logging.getLogger(__name__)

ZERO_RESIDUAL_TOL = 1e-10
NODAL_ZERO_TOL = 1e-9
MONOTONE_TOL = 1e-3


class SampleError(ValueError):
    pass


class InconclusiveCountError(SampleError):
    pass


# blow-up sequences


def _check_radii(radii: Sequence[float]) -> List[float]:
    values = [float(r) for r in radii]
    if not values:
        raise SampleError("need at least one radius")
    if any(r <= 0 for r in values):
        raise SampleError("radii must be positive")
    if any(b >= a for a, b in zip(values, values[1:])):
        raise SampleError("radii must be strictly decreasing")
    return values


def blowup_measure(m: PolyMeasure, r: float, rule: SphereRule, *, seed: int = 0) -> ParticleMeasure:
    """T_{0,r}[omega] / omega(B_r) on B_1."""
    cloud = discretize(m, r, rule, seed=seed)
    normalizer = ball_measure(m, r, rule, check=False)
    return pushforward(cloud, np.zeros(m.dim), r).scaled(1.0 / normalizer)


def blowup_sequence(
    m: PolyMeasure,
    radii: Sequence[float],
    rule: SphereRule,
    *,
    seed: int = 0,
    threads: int = 1,
) -> List[ParticleMeasure]:
    values = _check_radii(radii)

    def one(r: float) -> ParticleMeasure:
        return blowup_measure(m, r, rule, seed=seed)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, values))
    return [one(r) for r in values]


def limit_candidate(m: PolyMeasure, rule: SphereRule, *, seed: int = 0) -> ParticleMeasure:
    """Normalized measure of the lowest-degree part h_j, the blow-up limit at 0."""
    bottom = PolyMeasure.from_poly(m.decomp.parts[m.bottom_degree])
    return blowup_measure(bottom, 1.0, rule, seed=seed)


# zero sets


@dataclass(frozen=True, eq=False)
class ZeroSetSample:
    dim: int
    points: np.ndarray
    generation: int
    window: float
    resolution: float

    @property
    def size(self) -> int:
        return int(self.points.shape[0])


def _resolution(points: np.ndarray) -> float:
    if points.shape[0] < 2:
        return float("inf")
    distances, _ = cKDTree(points).query(points, k=2)
    return float(distances[:, 1].max())


def zero_set_blowup(
    h: Poly,
    r: float,
    R: float,
    rule: SphereRule,
    *,
    seed: int = 0,
) -> ZeroSetSample:
    """Samples of {y in B_R : h(r y) = 0} found by casting the rule's directions from
    the simplex centres."""
    if not r > 0:
        raise SampleError(f"scale must be positive, got {r}")
    if not R > 0:
        raise SampleError(f"window must be positive, got {R}")
    g = h.dilate(r)
    largest = max(abs(c) for c in g.terms.values()) if g.terms else 0.0
    if largest == 0.0:
        raise SampleError("zero polynomial has no zero set sample")
    g = g * (1.0 / largest)
    chunks = []
    for center in cast_centers(h.dim, 0.25 * R, seed):
        t_max = R + float(np.linalg.norm(center))
        found = find_ray_roots(g, center, rule.nodes, t_max)
        points = center + found.t[:, None] * rule.nodes[found.ray]
        chunks.append(points[np.linalg.norm(points, axis=1) <= R])
    points = np.concatenate(chunks) if chunks else np.zeros((0, h.dim))

    if points.shape[0]:
        grad = np.stack([p.evaluate(points) for p in g.gradient()], axis=1)
        local_scale = np.linalg.norm(grad, axis=1) * R + 1e-300
        good = np.abs(g.evaluate(points)) <= ZERO_RESIDUAL_TOL * local_scale
        if not np.all(good):
            logger.debug("discarded %d zero-set samples over the residual bound", int((~good).sum()))
        points = points[good]
    return ZeroSetSample(h.dim, points, rule.level, float(R), _resolution(points))


def hausdorff_distance(a: ZeroSetSample, b: ZeroSetSample) -> float:
    """Max of the two directed sup nearest-neighbour distances."""
    if a.size == 0 or b.size == 0:
        raise SampleError("Hausdorff distance of an empty sample")
    if abs(a.window - b.window) > 1e-12 * max(a.window, b.window):
        raise SampleError(f"samples use different windows: {a.window} vs {b.window}")
    forward = cKDTree(b.points).query(a.points)[0].max()
    backward = cKDTree(a.points).query(b.points)[0].max()
    return float(max(forward, backward))


# reports


@dataclass(frozen=True)
class BlowupRow:
    r: float
    f1_distance: float
    hausdorff: float
    resolution: float


@dataclass(frozen=True)
class BlowupReport:
    poly_hash: str
    limit_degree: int
    rows: Tuple[BlowupRow, ...]
    monotone_last_decade: bool

    @property
    def final_distance(self) -> float:
        return self.rows[-1].f1_distance

    @property
    def hausdorff_decreasing(self) -> bool:
        """Each Hausdorff distance is at most the previous one, up to the grid
        resolution of both rows."""
        pairs = zip(self.rows, self.rows[1:])
        return all(b.hausdorff <= a.hausdorff + a.resolution + b.resolution for a, b in pairs)

    def to_csv(self, path: Union[str, Path]) -> Path:
        return reports.write_csv(
            path,
            ["r", "f1_distance", "hausdorff", "resolution"],
            [[row.r, row.f1_distance, row.hausdorff, row.resolution] for row in self.rows],
            {"poly_hash": self.poly_hash, "limit_degree": self.limit_degree},
        )


def _monotone_last_decade(radii: Sequence[float], values: Sequence[float]) -> bool:
    floor = min(radii) * 10.0
    tail = [v for r, v in zip(radii, values) if r <= floor]
    return all(b <= a + MONOTONE_TOL for a, b in zip(tail, tail[1:]))


def blowup_report(
    m: PolyMeasure,
    radii: Sequence[float],
    rule: SphereRule,
    *,
    limit: Optional[ParticleMeasure] = None,
    window: float = 2.0,
    zero_rule: Optional[SphereRule] = None,
    seed: int = 0,
    threads: int = 1,
) -> BlowupReport:
    """F_1 distance of each normalized blow-up to the limit candidate and the
    Hausdorff distance of the rescaled zero set to the limit zero set in B_window."""
    values = _check_radii(radii)
    zero_rule = zero_rule or rule
    sequence = blowup_sequence(m, values, rule, seed=seed, threads=threads)
    target = limit if limit is not None else limit_candidate(m, rule, seed=seed)
    bottom = m.decomp.parts[m.bottom_degree]
    target_zeros = zero_set_blowup(bottom, 1.0, window, zero_rule, seed=seed)

    rows = []
    for r, nu in zip(values, sequence):
        distance = f_r_distance(nu, target, 1.0, seed=seed)
        zeros = zero_set_blowup(m.poly, r, window, zero_rule, seed=seed)
        rows.append(
            BlowupRow(
                r=r,
                f1_distance=distance,
                hausdorff=hausdorff_distance(zeros, target_zeros),
                resolution=max(zeros.resolution, target_zeros.resolution),
            )
        )
    monotone = _monotone_last_decade(values, [row.f1_distance for row in rows])
    return BlowupReport(m.poly_hash, m.bottom_degree, tuple(rows), monotone)


# nodal domains on S^2


class UnionFind:
    """Disjoint sets over 0..size-1 with path compression and union by size."""

    def __init__(self, size: int):
        self.parent = list(range(size))
        self.rank_size = [1] * size
        self.num_components = size

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: int, b: int) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if self.rank_size[ra] < self.rank_size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.rank_size[ra] += self.rank_size[rb]
        self.num_components -= 1
        return True

    def components(self, members: Optional[Sequence[int]] = None) -> Dict[int, List[int]]:
        out: Dict[int, List[int]] = {}
        for x in members if members is not None else range(len(self.parent)):
            out.setdefault(self.find(x), []).append(x)
        return out


@lru_cache(maxsize=16)
def icosphere(level: int) -> Tuple[np.ndarray, np.ndarray]:
    """Vertices and undirected edges of the ``level``-times subdivided icosahedron."""
    phi = (1.0 + 5.0**0.5) / 2.0
    verts = [
        (-1, phi, 0), (1, phi, 0), (-1, -phi, 0), (1, -phi, 0),
        (0, -1, phi), (0, 1, phi), (0, -1, -phi), (0, 1, -phi),
        (phi, 0, -1), (phi, 0, 1), (-phi, 0, -1), (-phi, 0, 1),
    ]  # fmt: skip
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]  # fmt: skip
    vertices = [np.array(v, dtype=float) / np.linalg.norm(v) for v in verts]
    for _ in range(level):
        midpoint: Dict[Tuple[int, int], int] = {}

        def split(a: int, b: int) -> int:
            key = (a, b) if a < b else (b, a)
            if key not in midpoint:
                mid = vertices[a] + vertices[b]
                vertices.append(mid / np.linalg.norm(mid))
                midpoint[key] = len(vertices) - 1
            return midpoint[key]

        refined = []
        for a, b, c in faces:
            ab, bc, ca = split(a, b), split(b, c), split(c, a)
            refined.extend([(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)])
        faces = refined

    tri = np.array(faces, dtype=np.int64)
    edges = np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]])
    edges = np.unique(np.sort(edges, axis=1), axis=0)
    return np.array(vertices), edges


def nodal_labels(h: Poly, level: int) -> Tuple[np.ndarray, np.ndarray]:
    """Icosphere vertices and their sign labels; |h| below the tolerance is labelled 0."""
    vertices, _ = icosphere(level)
    values = h.evaluate(vertices)
    scale = float(np.max(np.abs(values)))
    labels = np.sign(values).astype(int)
    labels[np.abs(values) < NODAL_ZERO_TOL * scale] = 0
    return vertices, labels


def _count_components(h: Poly, level: int) -> int:
    _, edges = icosphere(level)
    _, labels = nodal_labels(h, level)
    uf = UnionFind(labels.shape[0])
    same = (labels[edges[:, 0]] == labels[edges[:, 1]]) & (labels[edges[:, 0]] != 0)
    for a, b in edges[same]:
        uf.union(int(a), int(b))
    return len(uf.components(np.nonzero(labels)[0].tolist()))


def nodal_components_s2(h: Poly, grid_level: int = 3, *, max_level: int = 7) -> int:
    """Connected components of S^2 minus the zero set of h, refined until the count is
    the same on two consecutive grid levels."""
    if h.dim != 3:
        raise SampleError(f"nodal counting runs on S^2, got dimension {h.dim}")
    if not h.is_homogeneous:
        raise SampleError("nodal counting needs a homogeneous polynomial")
    previous = None
    for level in range(grid_level, max_level + 1):
        count = _count_components(h, level)
        logger.debug("nodal count at level %d: %d", level, count)
        if count == previous:
            return count
        previous = count
    raise InconclusiveCountError(
        f"nodal count did not stabilise between levels {grid_level} and {max_level}"
    )


def nodal_dump(h: Poly, level: int, stem: Union[str, Path]) -> Tuple[Path, Path]:
    """Write labelled grid vertices as CSV and as a vertex-only OBJ file."""
    vertices, labels = nodal_labels(h, level)
    stem = Path(stem)
    csv_path = reports.write_csv(
        stem.with_suffix(".csv"),
        ["x", "y", "z", "label"],
        [[*v, int(lab)] for v, lab in zip(vertices.tolist(), labels.tolist())],
        {"level": level, "vertices": vertices.shape[0]},
    )
    obj_path = reports.write_obj_points(stem.with_suffix(".obj"), vertices)
    return csv_path, obj_path
