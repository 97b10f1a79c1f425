"""Incremental graph construction from a stream of observations.

Each observation either (a) relocalizes to an existing image node,
(b) commits a new image node together with its detected objects, or
(c) is dropped as ambiguous.  Branch selection:

  (a) some node passes BOTH gates: cosine similarity >= tau_image AND
      common-object ratio > 0.10.  The best-similarity node gets its
      feature refreshed and becomes the last-localized node.
  (b) otherwise, if the first observation ever, or similarity to the
      LAST LOCALIZED node <= tau_image: a new node is added and linked
      to the previous one.  Detections are folded in by descending
      score: a detection matching a neighboring object (similarity >=
      tau_object, same category) replaces the stored feature only when
      its score is higher; everything else becomes a new object node.
  (c) otherwise nothing changes; the delta records the drop.

The neighbor pool used for object matching is the 1-hop pool of the
freshly committed node: objects linked to it or to any image node
adjacent to it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .encoders import EncoderConfig, cosine_similarity
from .graph import TopoGraph

CO_GATE = 0.10


@dataclass
class Detection:
    feature: np.ndarray
    category: int
    score: float


@dataclass
class Observation:
    image_feature: np.ndarray
    detections: list[Detection] = field(default_factory=list)
    # Ground-truth pose, carried for the simulator and metrics only.
    # The builder and the agent never read it.
    pose: tuple | None = None


@dataclass
class GraphDelta:
    """What one builder step did, for logs and tests."""
    localized_to: int | None = None
    added_image: int | None = None
    updated_image: int | None = None
    added_objects: list[int] = field(default_factory=list)
    updated_objects: list[int] = field(default_factory=list)
    added_image_edges: list[tuple[int, int]] = field(default_factory=list)
    added_cross_edges: list[tuple[int, int]] = field(default_factory=list)
    dropped: bool = False

    def to_dict(self) -> dict:
        return {
            "localized_to": self.localized_to,
            "added_image": self.added_image,
            "updated_image": self.updated_image,
            "added_objects": list(self.added_objects),
            "updated_objects": list(self.updated_objects),
            "added_image_edges": [list(e) for e in self.added_image_edges],
            "added_cross_edges": [list(e) for e in self.added_cross_edges],
            "dropped": self.dropped,
        }


def neighbor_objects(graph: TopoGraph, image_id: int) -> set[int]:
    """Objects linked to image_id or to any node adjacent to it."""
    pool = graph.objects_of(image_id)
    for nb in graph.image_neighbors(image_id):
        pool |= graph.objects_of(nb)
    return pool


class GraphBuilder:
    def __init__(self, config: EncoderConfig):
        config.validate()
        self.config = config
        self.graph = TopoGraph(dim_image=config.dim_image, dim_object=config.dim_object)
        self.neighbor_pool: set[int] = set()

    def match_object(self, feature: np.ndarray, category: int,
                     pool: set[int] | None = None) -> int | None:
        """Best same-category object in the pool with similarity >= tau_object.

        Ties break toward the lowest object id.  Pool defaults to the
        current neighbor pool.
        """
        if pool is None:
            pool = self.neighbor_pool
        best_id: int | None = None
        best_sim = -2.0
        for obj_id in sorted(pool):
            obj = self.graph.object_nodes[obj_id]
            if obj.category != category:
                continue
            sim = cosine_similarity(feature, obj.feature)
            if sim >= self.config.tau_object and sim > best_sim:
                best_sim = sim
                best_id = obj_id
        return best_id

    def _match_detections(self, detections: list[Detection]) -> set[int]:
        """Identify detections against the whole graph, for the CO gate."""
        all_ids = set(range(self.graph.num_objects))
        matched: set[int] = set()
        for det in detections:
            hit = self.match_object(det.feature, det.category, all_ids)
            if hit is not None:
                matched.add(hit)
        return matched

    def localize(self, image_feature: np.ndarray,
                 current_objects: set[int]) -> int | None:
        """Best node passing the similarity AND common-object gates."""
        best_id: int | None = None
        best_sim = -2.0
        for node in self.graph.image_nodes:
            sim = cosine_similarity(image_feature, node.feature)
            if sim < self.config.tau_image:
                continue
            if self.graph.common_object_ratio(node.id, current_objects) <= CO_GATE:
                continue
            if sim > best_sim:
                best_sim = sim
                best_id = node.id
        return best_id

    def step(self, observation: Observation) -> GraphDelta:
        graph = self.graph
        delta = GraphDelta()
        feature = np.asarray(observation.image_feature, dtype=np.float64)

        if graph.num_images > 0:
            current = self._match_detections(observation.detections)
            hit = self.localize(feature, current)
            if hit is not None:
                return self._relocalize(hit, feature, delta)
            last = graph.image_nodes[graph.last_localized]
            if cosine_similarity(feature, last.feature) > self.config.tau_image:
                # Similar to the last node but failed the full localization
                # gates: ambiguous observation, dropped.
                delta.dropped = True
                return delta

        return self._commit_new_node(observation, feature, delta)

    def _relocalize(self, hit: int, feature: np.ndarray, delta: GraphDelta) -> GraphDelta:
        graph = self.graph
        graph.image_nodes[hit].feature = feature
        delta.localized_to = hit
        delta.updated_image = hit
        last = graph.last_localized
        if last is not None and last != hit:
            edge = (min(hit, last), max(hit, last))
            if edge not in graph.image_edges:
                graph.add_image_edge(hit, last)
                delta.added_image_edges.append(edge)
        graph.last_localized = hit
        # The neighbor pool is deliberately NOT refreshed here: it tracks
        # the most recently committed node, not the relocalized one.
        return delta

    def _commit_new_node(self, observation: Observation, feature: np.ndarray,
                         delta: GraphDelta) -> GraphDelta:
        graph = self.graph
        prev_last = graph.last_localized
        node_id = graph.add_image_node(feature)
        delta.added_image = node_id
        if prev_last is not None:
            delta.added_image_edges.append((min(node_id, prev_last), max(node_id, prev_last)))

        order = sorted(range(len(observation.detections)),
                       key=lambda i: (-observation.detections[i].score, i))
        pool = set(self.neighbor_pool)  # fixed while this observation is folded in
        for idx in order:
            det = observation.detections[idx]
            hit = self.match_object(det.feature, det.category, pool)
            if hit is not None:
                stored = graph.object_nodes[hit]
                if det.score > stored.score:
                    stored.feature = np.asarray(det.feature, dtype=np.float64)
                    stored.score = float(det.score)
                    delta.updated_objects.append(hit)
                continue
            obj_id = graph.add_object_node(det.feature, det.category, det.score, node_id)
            delta.added_objects.append(obj_id)
            delta.added_cross_edges.append((node_id, obj_id))

        self.neighbor_pool = neighbor_objects(graph, node_id)
        return delta
