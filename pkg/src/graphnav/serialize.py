"""Serialization: graph JSON, world JSON, episode JSONL, checkpoints, CSV.

Graphs and worlds are stored as schema-versioned JSON with features as
decimal arrays, so two runs with the same seed produce byte-identical
files.  Checkpoints carry a shape manifest next to the tensors; loading
against a mismatched architecture fails with an explicit error.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np
import torch

from .builder import Detection, Observation
from .graph import TopoGraph
from .gridsim import Episode, Pose, World, WorldObject

GRAPH_SCHEMA_VERSION = 1
WORLD_SCHEMA_VERSION = 1
CHECKPOINT_SCHEMA_VERSION = 1


class SchemaError(Exception):
    pass


class IncompatibleCheckpointError(Exception):
    pass


def _dump(payload: dict) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":")) + "\n"


def graph_to_json(graph: TopoGraph, meta: dict | None = None) -> str:
    payload = {
        "schema_version": GRAPH_SCHEMA_VERSION,
        "meta": meta or {},
        "dim_image": graph.dim_image,
        "dim_object": graph.dim_object,
        "images": [{"id": n.id, "feature": n.feature.tolist()}
                   for n in graph.image_nodes],
        "objects": [{"id": n.id, "feature": n.feature.tolist(),
                     "category": n.category, "score": n.score}
                    for n in graph.object_nodes],
        "image_edges": sorted([list(e) for e in graph.image_edges]),
        "cross_edges": sorted([list(e) for e in graph.cross_edges]),
        "last_localized": graph.last_localized,
    }
    return _dump(payload)


def graph_from_json(text: str) -> TopoGraph:
    payload = json.loads(text)
    if payload.get("schema_version") != GRAPH_SCHEMA_VERSION:
        raise SchemaError(f"unsupported graph schema: {payload.get('schema_version')}")
    from .graph import ImageNode, ObjectState
    graph = TopoGraph(dim_image=payload["dim_image"],
                      dim_object=payload["dim_object"])
    for img in payload["images"]:
        graph.image_nodes.append(ImageNode(img["id"],
                                           np.asarray(img["feature"], dtype=np.float64)))
    for obj in payload["objects"]:
        graph.object_nodes.append(ObjectState(obj["id"],
                                              np.asarray(obj["feature"], dtype=np.float64),
                                              obj["category"], obj["score"]))
    graph.image_edges = {tuple(e) for e in payload["image_edges"]}
    graph.cross_edges = {tuple(e) for e in payload["cross_edges"]}
    graph.last_localized = payload["last_localized"]
    return graph


def world_to_json(world: World) -> str:
    return _dump({
        "schema_version": WORLD_SCHEMA_VERSION,
        "seed": world.seed,
        "width": world.width,
        "height": world.height,
        "grid": world.grid.astype(int).tolist(),
        "objects": [{"cell": list(o.cell), "category": o.category,
                     "identity": o.identity} for o in world.objects],
    })


def world_from_json(text: str) -> World:
    payload = json.loads(text)
    if payload.get("schema_version") != WORLD_SCHEMA_VERSION:
        raise SchemaError(f"unsupported world schema: {payload.get('schema_version')}")
    return World(
        grid=np.asarray(payload["grid"], dtype=bool),
        objects=[WorldObject(cell=tuple(o["cell"]), category=o["category"],
                             identity=o["identity"]) for o in payload["objects"]],
        seed=payload["seed"],
        width=payload["width"],
        height=payload["height"],
    )


def _observation_to_dict(obs: Observation) -> dict:
    return {
        "image_feature": np.asarray(obs.image_feature).tolist(),
        "detections": [{"feature": np.asarray(d.feature).tolist(),
                        "category": d.category, "score": d.score}
                       for d in obs.detections],
    }


def _observation_from_dict(payload: dict) -> Observation:
    return Observation(
        image_feature=np.asarray(payload["image_feature"], dtype=np.float64),
        detections=[Detection(np.asarray(d["feature"], dtype=np.float64),
                              d["category"], d["score"])
                    for d in payload["detections"]],
    )


def episodes_to_jsonl(episodes: list[Episode]) -> str:
    lines = []
    for ep in episodes:
        lines.append(_dump({
            **ep.to_dict(),
            "goal_observation": _observation_to_dict(ep.goal_observation),
        }))
    return "".join(lines)


def episodes_from_jsonl(text: str) -> list[Episode]:
    episodes = []
    for line in text.splitlines():
        if not line.strip():
            continue
        payload = json.loads(line)
        episodes.append(Episode(
            start=Pose(*payload["start"]),
            goal=tuple(payload["goal"]),
            goal_observation=_observation_from_dict(payload["goal_observation"]),
            shortest_m=payload["shortest_m"],
            tier=payload["tier"],
        ))
    return episodes


def write_jsonl(path: str | Path, rows: list[dict]) -> None:
    with open(path, "w") as fh:
        for row in rows:
            fh.write(_dump(row))


METRIC_COLUMNS = ["epoch", "phase", "loss", "success", "spl",
                  "success_easy", "success_medium", "success_hard"]


def write_metrics_csv(path: str | Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k, "") for k in METRIC_COLUMNS})


def _manifest(mixer, policy) -> dict:
    out = {}
    for prefix, module in (("mixer", mixer), ("policy", policy)):
        for name, tensor in module.state_dict().items():
            out[f"{prefix}.{name}"] = list(tensor.shape)
    return out


def save_checkpoint(path: str | Path, mixer, policy, config_dict: dict) -> None:
    torch.save({
        "schema_version": CHECKPOINT_SCHEMA_VERSION,
        "config": config_dict,
        "manifest": _manifest(mixer, policy),
        "mixer_state": mixer.state_dict(),
        "policy_state": policy.state_dict(),
    }, path)


def load_checkpoint(path: str | Path, mixer, policy) -> dict:
    """Load tensors into the given modules; returns the config echo."""
    payload = torch.load(path, weights_only=False)
    if payload.get("schema_version") != CHECKPOINT_SCHEMA_VERSION:
        raise SchemaError(
            f"unsupported checkpoint schema: {payload.get('schema_version')}")
    expected = _manifest(mixer, policy)
    if payload["manifest"] != expected:
        diff = {k for k in set(expected) | set(payload["manifest"])
                if expected.get(k) != payload["manifest"].get(k)}
        raise IncompatibleCheckpointError(
            f"checkpoint shape manifest mismatch on: {sorted(diff)[:8]}")
    mixer.load_state_dict(payload["mixer_state"])
    policy.load_state_dict(payload["policy_state"])
    return payload["config"]


def export_params(checkpoint_path: str | Path, out_dir: str | Path) -> None:
    """Write a JSON shape manifest plus an .npz of all named tensors."""
    payload = torch.load(checkpoint_path, weights_only=False)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "manifest.json").write_text(_dump({
        "schema_version": payload["schema_version"],
        "manifest": payload["manifest"],
        "config": payload["config"],
    }))
    arrays = {}
    for prefix in ("mixer_state", "policy_state"):
        for name, tensor in payload[prefix].items():
            arrays[f"{prefix[:-6]}.{name}"] = tensor.numpy()
    np.savez(out_dir / "params.npz", **arrays)
