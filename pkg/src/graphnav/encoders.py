"""Feature encoders and similarity primitives.

The navigation stack only ever sees unit-norm feature vectors.  In the
simulator those come from an :class:`OracleEncoder`: every world entity
(a grid cell for images, an object identity for objects) owns a fixed
random anchor direction, and an observation of that entity is the anchor
plus isotropic Gaussian noise, re-normalized.  With the default noise
level, repeated views of the same entity stay above the similarity
thresholds while distinct entities stay far below them, so the
add-or-update logic of the graph builder behaves the same way it would
with learned encoders.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class EncoderConfig:
    dim_image: int = 32
    dim_object: int = 16
    noise_sigma: float = 0.05
    tau_image: float = 0.75
    tau_object: float = 0.8

    def validate(self) -> None:
        if self.dim_image < 2 or self.dim_object < 2:
            raise ValueError("feature dimensions must be >= 2")
        if not (0.0 < self.tau_image < 1.0 and 0.0 < self.tau_object < 1.0):
            raise ValueError("similarity thresholds must lie in (0, 1)")
        if self.noise_sigma < 0.0:
            raise ValueError("noise_sigma must be nonnegative")


def unit(v: np.ndarray) -> np.ndarray:
    """Return v scaled to unit L2 norm."""
    n = np.linalg.norm(v)
    if n == 0.0:
        raise ValueError("cannot normalize the zero vector")
    return v / n


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine similarity undefined for zero vectors")
    return float(np.dot(a, b) / (na * nb))


class OracleEncoder:
    """Deterministic stand-in for learned image/object encoders.

    Anchors are derived from (world seed, kind, identity) alone, so the
    same identity always maps to the same direction regardless of call
    order, and two encoders built with the same seed agree exactly.
    """

    _IMAGE_KIND = 0
    _OBJECT_KIND = 1

    def __init__(self, config: EncoderConfig, world_seed: int):
        config.validate()
        self.config = config
        self.world_seed = int(world_seed)
        self._anchor_cache: dict[tuple[int, int], np.ndarray] = {}

    def _anchor(self, kind: int, identity: int, dim: int) -> np.ndarray:
        key = (kind, identity)
        cached = self._anchor_cache.get(key)
        if cached is None:
            rng = np.random.default_rng([self.world_seed, kind, int(identity)])
            cached = unit(rng.standard_normal(dim))
            self._anchor_cache[key] = cached
        return cached

    def _encode(self, kind: int, identity: int, dim: int,
                rng: np.random.Generator | None) -> np.ndarray:
        anchor = self._anchor(kind, identity, dim)
        sigma = self.config.noise_sigma
        if sigma == 0.0 or rng is None:
            return anchor.copy()
        return unit(anchor + sigma * rng.standard_normal(dim))

    def encode_image(self, cell_identity: int,
                     rng: np.random.Generator | None = None) -> np.ndarray:
        return self._encode(self._IMAGE_KIND, cell_identity,
                            self.config.dim_image, rng)

    def encode_object(self, object_identity: int,
                      rng: np.random.Generator | None = None) -> np.ndarray:
        return self._encode(self._OBJECT_KIND, object_identity,
                            self.config.dim_object, rng)
