"""Fixed class centers on the vertices of a regular simplex.

The C centers sit on a hypersphere of radius ``r`` (the expand factor) in a
``d``-dimensional feature space, ``d >= C - 1``.  Every pair of centers has
the same inner product ``-r**2 / (C - 1)`` and the centers sum to zero.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any

import numpy as np

# Relative tolerance used to decide that two squared distances are a tie.
TIE_RTOL = 1e-12
DEGENERATE_EPS = 1e-12


class DimensionError(ValueError):
    """Raised when array shapes disagree with the simplex geometry."""


class DegenerateCentersError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SimplexCenters:
    num_classes: int
    feature_dim: int
    radius: float
    vertices: np.ndarray  # (num_classes, feature_dim), row j is center j

    def __post_init__(self):
        vertices = np.array(self.vertices, dtype=np.float64)
        if vertices.shape != (self.num_classes, self.feature_dim):
            raise DimensionError(
                f"vertices have shape {vertices.shape}, expected "
                f"({self.num_classes}, {self.feature_dim})"
            )
        vertices.setflags(write=False)
        object.__setattr__(self, "vertices", vertices)

    def __eq__(self, other):
        if not isinstance(other, SimplexCenters):
            return NotImplemented
        return (
            self.num_classes == other.num_classes
            and self.feature_dim == other.feature_dim
            and self.radius == other.radius
            and np.array_equal(self.vertices, other.vertices)
        )

    def invariant_deviations(self) -> dict[str, float]:
        """Relative deviations from the equinorm, equiangular and zero-sum rules."""
        r = self.radius
        c = self.num_classes
        norms = np.linalg.norm(self.vertices, axis=1)
        gram = self.vertices @ self.vertices.T
        off = gram[~np.eye(c, dtype=bool)]
        target = -(r * r) / (c - 1)
        return {
            "equinorm": float(np.max(np.abs(norms - r)) / r),
            "equiangular": float(np.max(np.abs(off - target)) / abs(target)),
            "zero_sum": float(np.linalg.norm(self.vertices.sum(axis=0)) / r),
        }

    def check_invariants(self, tol: float = 1e-9) -> bool:
        if self.num_classes < 2 or self.feature_dim < self.num_classes - 1:
            return False
        return all(v < tol for v in self.invariant_deviations().values())

    def to_dict(self) -> dict[str, Any]:
        return {
            "num_classes": self.num_classes,
            "feature_dim": self.feature_dim,
            "radius": self.radius,
            "vertices": self.vertices.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "SimplexCenters":
        return cls(
            num_classes=int(data["num_classes"]),
            feature_dim=int(data["feature_dim"]),
            radius=float(data["radius"]),
            vertices=np.asarray(data["vertices"], dtype=np.float64),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "SimplexCenters":
        return cls.from_dict(json.loads(text))


def _householder_basis(c: int) -> np.ndarray:
    """Orthonormal basis (c, c-1) of the complement of the all-ones vector.

    The reflection maps e_0 onto ones/sqrt(c); its remaining columns span the
    orthogonal complement.
    """
    u = np.full(c, 1.0 / np.sqrt(c))
    v = -u
    v[0] += 1.0
    h = np.eye(c) - 2.0 * np.outer(v, v) / (v @ v)
    return h[:, 1:]


def build_simplex(num_classes: int, feature_dim: int, radius: float) -> SimplexCenters:
    if num_classes < 2:
        raise ValueError(f"num_classes must be >= 2, got {num_classes}")
    if not radius > 0 or not np.isfinite(radius):
        raise ValueError(f"radius must be a positive finite number, got {radius}")
    if feature_dim < num_classes - 1:
        raise DimensionError(
            f"feature_dim={feature_dim} is too small: need d >= C-1 = {num_classes - 1}"
        )
    c = num_classes
    centered = np.sqrt(c / (c - 1)) * (np.eye(c) - np.full((c, c), 1.0 / c))
    coords = centered @ _householder_basis(c)
    vertices = np.zeros((c, feature_dim))
    vertices[:, : c - 1] = radius * coords
    return SimplexCenters(c, feature_dim, float(radius), vertices)


def _as_batch(features, centers: SimplexCenters) -> np.ndarray:
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 2 or f.shape[1] != centers.feature_dim:
        raise DimensionError(
            f"features have shape {f.shape}, expected (n, {centers.feature_dim})"
        )
    return f


def squared_distances(features, centers: SimplexCenters) -> np.ndarray:
    """(n, C) matrix of squared Euclidean distances to every center."""
    f = _as_batch(features, centers)
    diff = f[:, None, :] - centers.vertices[None, :, :]
    return np.einsum("ncd,ncd->nc", diff, diff)


def _argmin_lowest(sq: np.ndarray) -> np.ndarray:
    # Near-equal distances (round-off) count as ties and go to the lowest index.
    lo = sq.min(axis=1, keepdims=True)
    tol = TIE_RTOL * np.maximum(sq.max(axis=1, keepdims=True), np.finfo(float).tiny)
    return np.argmax(sq <= lo + tol, axis=1)


def nearest_centers(features, centers: SimplexCenters) -> tuple[np.ndarray, np.ndarray]:
    """Batched :func:`nearest_center`: returns (indices, squared distances)."""
    sq = squared_distances(features, centers)
    idx = _argmin_lowest(sq)
    return idx, sq[np.arange(len(idx)), idx]


def nearest_center(feature, centers: SimplexCenters) -> tuple[int, float]:
    f = np.asarray(feature, dtype=np.float64)
    if f.shape != (centers.feature_dim,):
        raise DimensionError(f"feature has shape {f.shape}, expected ({centers.feature_dim},)")
    idx, sq = nearest_centers(f[None, :], centers)
    return int(idx[0]), float(sq[0])


def uncertainty_parts(features, centers: SimplexCenters):
    """Per-sample pieces of the uncertainty ratio.

    Returns ``(nearest, dists, a, b)`` where ``dists`` is the (n, C) distance
    matrix, ``a`` the distance to the nearest center and ``b`` the mean
    distance to the other C-1 centers.
    """
    if centers.num_classes < 2:
        raise ValueError("uncertainty ratio needs at least two centers")
    sq = squared_distances(features, centers)
    nearest = _argmin_lowest(sq)
    dists = np.sqrt(sq)
    rows = np.arange(len(nearest))
    a = dists[rows, nearest]
    b = (dists.sum(axis=1) - a) / (centers.num_classes - 1)
    if np.any(b < DEGENERATE_EPS):
        raise DegenerateCentersError(
            "mean distance to the non-nearest centers is below 1e-12; centers are corrupt"
        )
    return nearest, dists, a, b


def uncertainty_ratios(features, centers: SimplexCenters) -> np.ndarray:
    _, _, a, b = uncertainty_parts(features, centers)
    # a is the minimum distance, so a/b <= 1 up to round-off.
    return np.clip(a / b, 0.0, 1.0)


def uncertainty_ratio(feature, centers: SimplexCenters) -> float:
    f = np.asarray(feature, dtype=np.float64)
    if f.shape != (centers.feature_dim,):
        raise DimensionError(f"feature has shape {f.shape}, expected ({centers.feature_dim},)")
    return float(uncertainty_ratios(f[None, :], centers)[0])
