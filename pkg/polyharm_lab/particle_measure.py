"""Weighted point clouds standing in for c * omega_h inside a truncation ball.

``discretize`` casts the quadrature directions of a sphere rule from n+1 centres
(a randomly rotated regular simplex) and turns every transversal crossing of the
zero set into a particle. The surface element seen from centre j is
t^{n-1} dsigma / |cos_j|, so a crossing carries w t^{n-1} |grad h| / |cos_j|; the
partition of unity cos_j^2 / sum_i cos_i^2 splits each surface point among the
centres.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence, Union

import numpy as np

from polyharm_lab import reports
from polyharm_lab.measure_engine import PolyMeasure, ball_measure
from polyharm_lab.roots import ROOT_METHODS, find_ray_roots
from polyharm_lab.sphere_quad import SphereRule

logger = logging.getLogger(__name__)

DEFAULT_CENTER_FRACTION = 0.25
TANGENTIAL_TOL = 1e-8
CONTAINMENT_TOL = 1e-9


class ParticleError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ParticleMeasure:
    dim: int
    points: np.ndarray
    masses: np.ndarray
    truncation_radius: float
    metadata: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        points = np.asarray(self.points, dtype=float).reshape(-1, self.dim)
        masses = np.asarray(self.masses, dtype=float).reshape(-1)
        if points.shape[0] != masses.shape[0]:
            raise ParticleError(f"{points.shape[0]} points but {masses.shape[0]} masses")
        if np.any(masses <= 0) or not np.all(np.isfinite(masses)):
            raise ParticleError("particle masses must be positive and finite")
        if self.truncation_radius < 0:
            raise ParticleError(f"negative truncation radius {self.truncation_radius}")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "masses", masses)
        object.__setattr__(self, "truncation_radius", float(self.truncation_radius))
        object.__setattr__(self, "metadata", dict(self.metadata))

    @classmethod
    def empty(cls, dim: int, truncation_radius: float = 0.0, **metadata: Any) -> "ParticleMeasure":
        return cls(dim, np.zeros((0, dim)), np.zeros(0), truncation_radius, metadata)

    @property
    def size(self) -> int:
        return int(self.masses.shape[0])

    @property
    def total_mass(self) -> float:
        return math.fsum(self.masses.tolist())

    @property
    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.points, axis=1)

    def scaled(self, factor: float) -> "ParticleMeasure":
        if not factor > 0:
            raise ParticleError(f"scale factor must be positive, got {factor}")
        return ParticleMeasure(
            self.dim, self.points, self.masses * factor, self.truncation_radius, self.metadata
        )

    def restricted(self, radius: float) -> "ParticleMeasure":
        """Particles in the closed ball B_radius; the validity region shrinks accordingly."""
        keep = self.norms <= radius
        return ParticleMeasure(
            self.dim,
            self.points[keep],
            self.masses[keep],
            min(self.truncation_radius, float(radius)),
            self.metadata,
        )

    def coarsen(self, cell: float) -> "ParticleMeasure":
        """Merge particles sharing a grid cell of side ``cell`` into its centre."""
        if not cell > 0:
            raise ParticleError(f"cell size must be positive, got {cell}")
        if self.size == 0:
            return self
        keys = np.floor(self.points / cell).astype(np.int64)
        unique, inverse = np.unique(keys, axis=0, return_inverse=True)
        masses = np.bincount(inverse.reshape(-1), weights=self.masses, minlength=unique.shape[0])
        meta = dict(self.metadata, coarsen_cell=cell)
        return ParticleMeasure(
            self.dim, (unique + 0.5) * cell, masses, self.truncation_radius, meta
        )

    def f_r_self(self, r: float) -> float:
        """F_r(mu, 0) = sum of m (r - |p|)^+."""
        return math.fsum((self.masses * np.clip(r - self.norms, 0.0, None)).tolist())

    def to_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        columns = [f"x{i + 1}" for i in range(self.dim)] + ["mass"]
        rows = np.column_stack([self.points, self.masses]).tolist()
        reports.write_csv(path, columns, rows, {"n": self.dim, "R": self.truncation_radius})
        sidecar = dict(self.metadata, R=self.truncation_radius, dim=self.dim, size=self.size)
        reports.write_json(path.with_suffix(".json"), sidecar)
        return path

    @classmethod
    def from_csv(cls, path: Union[str, Path]) -> "ParticleMeasure":
        path = Path(path)
        _, columns, rows = reports.read_csv(path)
        sidecar = json.loads(path.with_suffix(".json").read_text(encoding="utf-8"))
        dim = int(sidecar["dim"])
        data = np.asarray(rows, dtype=float).reshape(-1, len(columns))
        meta = {k: v for k, v in sidecar.items() if k not in ("R", "dim", "size")}
        return cls(dim, data[:, :dim], data[:, dim], float(sidecar["R"]), meta)


def _simplex_directions(n: int) -> np.ndarray:
    """Unit vertices of a regular simplex in R^n, shape (n+1, n)."""
    centered = np.eye(n + 1) - 1.0 / (n + 1)
    _, _, vt = np.linalg.svd(centered)
    coords = centered @ vt[:n].T
    return coords / np.linalg.norm(coords, axis=1, keepdims=True)


def cast_centers(n: int, radius: float, seed: int) -> np.ndarray:
    """n+1 ray origins on the sphere of the given radius, a seeded rotation of a simplex."""
    rng = np.random.default_rng(seed)
    q, upper = np.linalg.qr(rng.standard_normal((n, n)))
    q = q * np.sign(np.diag(upper))
    return radius * _simplex_directions(n) @ q.T


def discretize(
    m: PolyMeasure,
    R: float,
    rule: SphereRule,
    roots_per_ray_max: Optional[int] = None,
    *,
    seed: int = 0,
    center_fraction: float = DEFAULT_CENTER_FRACTION,
    root_method: str = "companion",
    tangential_tol: float = TANGENTIAL_TOL,
) -> ParticleMeasure:
    if not R > 0:
        raise ParticleError(f"truncation radius must be positive, got {R}")
    if rule.dim != m.dim:
        raise ParticleError(f"rule dimension {rule.dim} != measure dimension {m.dim}")
    if root_method not in ROOT_METHODS:
        raise ParticleError(f"unknown root method {root_method!r}")
    n = m.dim
    cap = roots_per_ray_max if roots_per_ray_max is not None else max(m.top_degree, 1)
    centers = cast_centers(n, center_fraction * R, seed)
    gradient = m.poly.gradient()
    dirs, weights = rule.nodes, rule.weights

    chunks_points = []
    chunks_masses = []
    kept = 0.0
    dropped = 0.0
    capped = 0
    for j, center in enumerate(centers):
        t_max = R + float(np.linalg.norm(center))
        found = find_ray_roots(m.poly, center, dirs, t_max, root_method)
        ray, t = found.ray, found.t
        if ray.size:
            first = np.searchsorted(ray, ray, side="left")
            rank = np.arange(ray.size) - first
            over = rank >= cap
            capped += int(over.sum())
            ray, t = ray[~over], t[~over]
        points = center + t[:, None] * dirs[ray]
        inside = np.linalg.norm(points, axis=1) <= R
        ray, t, points = ray[inside], t[inside], points[inside]
        if ray.size == 0:
            continue

        grad = np.stack([g.evaluate(points) for g in gradient], axis=1)
        grad_norm = np.linalg.norm(grad, axis=1)
        safe_norm = np.where(grad_norm > 0, grad_norm, 1.0)
        offsets = points[:, None, :] - centers[None, :, :]
        offsets /= np.linalg.norm(offsets, axis=2, keepdims=True)
        cosines = np.einsum("pcn,pn->pc", offsets, grad) / safe_norm[:, None]
        share = np.sum(cosines**2, axis=1)
        own = np.abs(cosines[:, j])
        mass = np.where(
            share > 0,
            weights[ray] * t ** (n - 1) * grad_norm * own / np.where(share > 0, share, 1.0),
            0.0,
        )
        good = (grad_norm > 0) & (own >= tangential_tol) & (mass > 0)
        dropped += math.fsum(mass[~good].tolist())
        kept += math.fsum(mass[good].tolist())
        chunks_points.append(points[good])
        chunks_masses.append(mass[good])

    if capped:
        logger.warning("%d roots beyond the per-ray cap of %d were ignored", capped, cap)
    fraction = dropped / (kept + dropped) if kept + dropped > 0 else 0.0
    if fraction > 0:
        logger.info("dropped tangential mass fraction %.3e (R=%g)", fraction, R)
    metadata = {
        "poly_hash": m.poly_hash,
        "rule_level": rule.level,
        "rule_kind": rule.kind,
        "seed": seed,
        "root_method": root_method,
        "dropped_fraction": fraction,
    }
    if not chunks_points:
        return ParticleMeasure.empty(n, R, **metadata)
    points = np.concatenate(chunks_points)
    masses = np.concatenate(chunks_masses) * m.scale
    return ParticleMeasure(n, points, masses, R, metadata)


def pushforward(mu: ParticleMeasure, x: Sequence[float], r: float) -> ParticleMeasure:
    """T_{x,r}[mu]: particles move to (p - x) / r with unchanged masses."""
    if not r > 0:
        raise ParticleError(f"pushforward scale must be positive, got {r}")
    x = np.asarray(x, dtype=float).reshape(mu.dim)
    reach = mu.truncation_radius - float(np.linalg.norm(x))
    meta = dict(mu.metadata)
    if reach <= 0:
        logger.info("pushforward centre outside the validity ball; result is empty")
        return ParticleMeasure.empty(mu.dim, 0.0, **meta)
    return ParticleMeasure(mu.dim, (mu.points - x) / r, mu.masses, reach / r, meta)


def ball_mass(mu: ParticleMeasure, center: Sequence[float], r: float) -> float:
    """Total mass of the particles in the closed ball B(center, r)."""
    if r < 0:
        raise ParticleError(f"negative radius {r}")
    if r == 0:
        return 0.0
    center = np.asarray(center, dtype=float).reshape(mu.dim)
    if float(np.linalg.norm(center)) + r > mu.truncation_radius * (1.0 + CONTAINMENT_TOL):
        raise ParticleError(
            f"ball B({center.tolist()}, {r}) exceeds the validity region B_{mu.truncation_radius}"
        )
    inside = np.linalg.norm(mu.points - center, axis=1) <= r
    return math.fsum(mu.masses[inside].tolist())


def total_mass_error(mu: ParticleMeasure, m: PolyMeasure, rule: SphereRule) -> float:
    """Relative gap between the cloud's total mass and the quadrature value of omega(B_R)."""
    exact = ball_measure(m, mu.truncation_radius, rule, check=False)
    return abs(mu.total_mass - exact) / exact

