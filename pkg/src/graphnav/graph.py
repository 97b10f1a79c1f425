"""Topological graph memory: image nodes, object nodes, and affinities.

Two node families live in one structure.  Image nodes record visited
places through their panoramic feature; object nodes record unique
physical objects as (feature, category, detection score).  Image-image
edges link consecutively localized places, cross edges tie each object
to the image node it was first committed under.  The object-object
affinity is never stored: it is derived on demand as

    A_ob = A_c^T (A_im + I) A_c

which connects objects whose host images coincide or are adjacent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

NORM_TOL = 1e-6


class GraphError(Exception):
    """Base error for graph memory operations."""


class NodeNotFoundError(GraphError):
    pass


@dataclass
class ImageNode:
    id: int
    feature: np.ndarray


@dataclass
class ObjectState:
    id: int
    feature: np.ndarray
    category: int
    score: float


def _check_unit(feature: np.ndarray, dim: int, what: str) -> np.ndarray:
    feature = np.asarray(feature, dtype=np.float64)
    if feature.shape != (dim,):
        raise ValueError(f"{what} feature must have shape ({dim},), got {feature.shape}")
    if abs(np.linalg.norm(feature) - 1.0) > NORM_TOL:
        raise ValueError(f"{what} feature must be unit norm")
    return feature


@dataclass
class TopoGraph:
    dim_image: int
    dim_object: int
    n_categories: int = 80
    image_nodes: list[ImageNode] = field(default_factory=list)
    object_nodes: list[ObjectState] = field(default_factory=list)
    image_edges: set[tuple[int, int]] = field(default_factory=set)
    cross_edges: set[tuple[int, int]] = field(default_factory=set)
    last_localized: int | None = None

    @property
    def num_images(self) -> int:
        return len(self.image_nodes)

    @property
    def num_objects(self) -> int:
        return len(self.object_nodes)

    def _require_image(self, image_id: int) -> ImageNode:
        if not 0 <= image_id < len(self.image_nodes):
            raise NodeNotFoundError(f"no image node {image_id}")
        return self.image_nodes[image_id]

    def add_image_node(self, feature: np.ndarray) -> int:
        feature = _check_unit(feature, self.dim_image, "image")
        node_id = len(self.image_nodes)
        self.image_nodes.append(ImageNode(node_id, feature))
        if self.last_localized is not None:
            self.add_image_edge(node_id, self.last_localized)
        self.last_localized = node_id
        return node_id

    def add_image_edge(self, a: int, b: int) -> None:
        # Self-loops are skipped: A_im keeps a zero diagonal.
        self._require_image(a)
        self._require_image(b)
        if a != b:
            self.image_edges.add((min(a, b), max(a, b)))

    def add_object_node(self, feature: np.ndarray, category: int, score: float,
                        host_image_id: int) -> int:
        self._require_image(host_image_id)
        feature = _check_unit(feature, self.dim_object, "object")
        if not 0 <= category < self.n_categories:
            raise ValueError(f"category {category} out of range [0, {self.n_categories})")
        if not 0.0 <= score <= 1.0:
            raise ValueError(f"detection score {score} outside [0, 1]")
        obj_id = len(self.object_nodes)
        self.object_nodes.append(ObjectState(obj_id, feature, int(category), float(score)))
        self.cross_edges.add((host_image_id, obj_id))
        return obj_id

    def image_affinity(self) -> np.ndarray:
        n = self.num_images
        a = np.zeros((n, n), dtype=np.int64)
        for (i, j) in self.image_edges:
            a[i, j] = 1
            a[j, i] = 1
        return a

    def cross_affinity(self) -> np.ndarray:
        a = np.zeros((self.num_images, self.num_objects), dtype=np.int64)
        for (i, k) in self.cross_edges:
            a[i, k] = 1
        return a

    def object_affinity(self) -> np.ndarray:
        a_im = self.image_affinity()
        a_c = self.cross_affinity()
        eye = np.eye(self.num_images, dtype=np.int64)
        return a_c.T @ (a_im + eye) @ a_c

    def objects_of(self, image_id: int) -> set[int]:
        """Object ids cross-linked to one image node."""
        self._require_image(image_id)
        return {k for (i, k) in self.cross_edges if i == image_id}

    def image_neighbors(self, image_id: int) -> set[int]:
        self._require_image(image_id)
        out: set[int] = set()
        for (a, b) in self.image_edges:
            if a == image_id:
                out.add(b)
            elif b == image_id:
                out.add(a)
        return out

    def common_object_ratio(self, image_id: int, current_objects: set[int]) -> float:
        """Jaccard overlap between an image node's objects and the current set.

        Both sets empty counts as 0: no objects means no co-location
        evidence, so localization then rests on image similarity alone.
        """
        mine = self.objects_of(image_id)
        union = mine | set(current_objects)
        if not union:
            return 0.0
        return len(mine & set(current_objects)) / len(union)

    def image_features(self) -> np.ndarray:
        if not self.image_nodes:
            return np.zeros((0, self.dim_image))
        return np.stack([n.feature for n in self.image_nodes])

    def object_features(self) -> np.ndarray:
        if not self.object_nodes:
            return np.zeros((0, self.dim_object))
        return np.stack([n.feature for n in self.object_nodes])
