"""Procedural gridworld: rooms, objects, observations, planner, metrics.

Cells are 0.25 m squares, matching the forward step size.  A pose is
(row, col, heading) with heading in {0: north, 1: east, 2: south,
3: west}; turns are 90 degrees.  Observations are panoramic: they
depend on the cell only, never on the heading.  Success means the agent
issues STOP within 1 m geodesic of the goal.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .builder import Detection, Observation
from .encoders import OracleEncoder

CELL_M = 0.25
SUCCESS_RADIUS_M = 1.0

FORWARD, TURN_LEFT, TURN_RIGHT, STOP = 0, 1, 2, 3
ACTION_NAMES = ("forward", "turn_left", "turn_right", "stop")

# heading -> (drow, dcol)
HEADING_DELTAS = ((-1, 0), (0, 1), (1, 0), (0, -1))

TIER_BOUNDS = {"easy": (1.5, 3.0), "medium": (3.0, 5.0), "hard": (5.0, 10.0)}


class WorldGenerationError(Exception):
    pass


class PlanningError(Exception):
    pass


@dataclass(frozen=True)
class Pose:
    row: int
    col: int
    heading: int


@dataclass
class WorldObject:
    cell: tuple[int, int]
    category: int
    identity: int


@dataclass
class DetectorConfig:
    radius: int = 2          # Chebyshev detection radius in cells
    score_noise: float = 0.05


@dataclass
class World:
    grid: np.ndarray         # bool, True = free
    objects: list[WorldObject]
    seed: int
    width: int
    height: int

    def is_free(self, row: int, col: int) -> bool:
        return (0 <= row < self.height and 0 <= col < self.width
                and bool(self.grid[row, col]))

    def cell_index(self, row: int, col: int) -> int:
        return row * self.width + col

    def free_cells(self) -> list[tuple[int, int]]:
        rows, cols = np.nonzero(self.grid)
        return list(zip(rows.tolist(), cols.tolist()))

    def main_component(self) -> set[tuple[int, int]]:
        """Largest 4-connected free component; episodes live inside it."""
        seen: set[tuple[int, int]] = set()
        best: set[tuple[int, int]] = set()
        for start in self.free_cells():
            if start in seen:
                continue
            comp = _flood(self, start)
            seen |= comp
            if len(comp) > len(best):
                best = comp
        return best


def _flood(world: World, start: tuple[int, int]) -> set[tuple[int, int]]:
    comp = {start}
    queue = deque([start])
    while queue:
        r, c = queue.popleft()
        for dr, dc in HEADING_DELTAS:
            nxt = (r + dr, c + dc)
            if nxt not in comp and world.is_free(*nxt):
                comp.add(nxt)
                queue.append(nxt)
    return comp


def generate_world(seed: int, width: int = 16, height: int = 16,
                   n_rooms: int = 4, n_objects: int = 12) -> World:
    """Rooms joined by L-shaped corridors; deterministic per seed."""
    if width < 8 or height < 8:
        raise WorldGenerationError("world must be at least 8x8")
    if n_objects < 0 or n_rooms < 1:
        raise WorldGenerationError("n_rooms must be >= 1 and n_objects >= 0")
    rng = np.random.default_rng(seed)
    grid = np.zeros((height, width), dtype=bool)

    centers = []
    for _ in range(n_rooms):
        rw = int(rng.integers(3, max(4, width // 3) + 1))
        rh = int(rng.integers(3, max(4, height // 3) + 1))
        r0 = int(rng.integers(1, height - rh - 1))
        c0 = int(rng.integers(1, width - rw - 1))
        grid[r0:r0 + rh, c0:c0 + rw] = True
        centers.append((r0 + rh // 2, c0 + rw // 2))

    for (r1, c1), (r2, c2) in zip(centers, centers[1:]):
        lo, hi = sorted((c1, c2))
        grid[r1, lo:hi + 1] = True
        lo, hi = sorted((r1, r2))
        grid[lo:hi + 1, c2] = True

    world = World(grid=grid, objects=[], seed=int(seed), width=width, height=height)
    free = sorted(world.main_component())
    if len(free) < 2:
        raise WorldGenerationError("degenerate world: fewer than 2 free cells")

    n_place = min(n_objects, len(free))
    picks = rng.choice(len(free), size=n_place, replace=False)
    for identity, pick in enumerate(sorted(int(p) for p in picks)):
        cell = free[pick]
        world.objects.append(WorldObject(cell=cell, category=int(rng.integers(0, 10)),
                                         identity=identity))
    return world


def line_of_sight(world: World, a: tuple[int, int], b: tuple[int, int]) -> bool:
    """Bresenham between cell centers; every visited cell must be free."""
    (r0, c0), (r1, c1) = a, b
    dr = abs(r1 - r0)
    dc = abs(c1 - c0)
    sr = 1 if r1 >= r0 else -1
    sc = 1 if c1 >= c0 else -1
    err = dr - dc
    r, c = r0, c0
    while True:
        if not world.is_free(r, c):
            return False
        if (r, c) == (r1, c1):
            return True
        e2 = 2 * err
        if e2 > -dc:
            err -= dc
            r += sr
        if e2 < dr:
            err += dr
            c += sc


def observe(world: World, pose: Pose, encoder: OracleEncoder,
            detector: DetectorConfig | None = None,
            rng: np.random.Generator | None = None) -> Observation:
    if not world.is_free(pose.row, pose.col):
        raise ValueError(f"pose {pose} is not on a free cell")
    detector = detector or DetectorConfig()
    cell = (pose.row, pose.col)
    feature = encoder.encode_image(world.cell_index(*cell), rng)
    detections: list[Detection] = []
    for obj in world.objects:
        dist_cheb = max(abs(obj.cell[0] - cell[0]), abs(obj.cell[1] - cell[1]))
        if dist_cheb > detector.radius:
            continue
        if not line_of_sight(world, cell, obj.cell):
            continue
        dist = math.hypot(obj.cell[0] - cell[0], obj.cell[1] - cell[1])
        score = 1.0 / (1.0 + dist)
        if rng is not None and detector.score_noise > 0.0:
            score += detector.score_noise * float(rng.standard_normal())
        score = float(np.clip(score, 0.0, 1.0))
        detections.append(Detection(
            feature=encoder.encode_object(obj.identity, rng),
            category=obj.category,
            score=score,
        ))
    return Observation(image_feature=feature, detections=detections, pose=pose)


def step_env(world: World, pose: Pose, action: int) -> Pose:
    if action == FORWARD:
        dr, dc = HEADING_DELTAS[pose.heading]
        nr, nc = pose.row + dr, pose.col + dc
        if world.is_free(nr, nc):
            return Pose(nr, nc, pose.heading)
        return pose  # bump into a wall: no-op
    if action == TURN_LEFT:
        return Pose(pose.row, pose.col, (pose.heading - 1) % 4)
    if action == TURN_RIGHT:
        return Pose(pose.row, pose.col, (pose.heading + 1) % 4)
    if action == STOP:
        return pose
    raise ValueError(f"unknown action {action}")


def distance_field(world: World, goal: tuple[int, int]) -> np.ndarray:
    """BFS cell distances from the goal; unreachable cells are +inf."""
    dist = np.full((world.height, world.width), np.inf)
    if not world.is_free(*goal):
        return dist
    dist[goal] = 0.0
    queue = deque([goal])
    while queue:
        r, c = queue.popleft()
        for dr, dc in HEADING_DELTAS:
            nr, nc = r + dr, c + dc
            if world.is_free(nr, nc) and not np.isfinite(dist[nr, nc]):
                dist[nr, nc] = dist[r, c] + 1.0
                queue.append((nr, nc))
    return dist


def geodesic_distance(world: World, a: tuple[int, int], b: tuple[int, int]) -> float:
    """Shortest-path length in meters; +inf when unreachable."""
    if not (world.is_free(*a) and world.is_free(*b)):
        raise ValueError("both endpoints must be free cells")
    return float(distance_field(world, b)[a]) * CELL_M


def oracle_action(world: World, pose: Pose, goal: tuple[int, int],
                  dist: np.ndarray | None = None,
                  stop_radius_m: float = SUCCESS_RADIUS_M) -> int:
    """Greedy shortest-path step: stop inside the stop radius, else
    turn toward (left on 180-degree ties) and walk the BFS descent."""
    if dist is None:
        dist = distance_field(world, goal)
    here = dist[pose.row, pose.col]
    if not np.isfinite(here):
        raise PlanningError("goal is unreachable from the current pose")
    if here * CELL_M <= stop_radius_m:
        return STOP
    best_heading = None
    best_val = here
    for heading, (dr, dc) in enumerate(HEADING_DELTAS):
        nr, nc = pose.row + dr, pose.col + dc
        if world.is_free(nr, nc) and dist[nr, nc] < best_val:
            best_val = dist[nr, nc]
            best_heading = heading
    if best_heading is None:
        raise PlanningError("no descending neighbor; inconsistent distance field")
    delta = (best_heading - pose.heading) % 4
    if delta == 0:
        return FORWARD
    if delta == 1:
        return TURN_RIGHT
    return TURN_LEFT  # delta 2 (behind, tie-break left) or 3


def classify_difficulty(geodesic_m: float) -> str | None:
    """Tier per geodesic length; None when outside every tier."""
    if 1.5 <= geodesic_m < 3.0:
        return "easy"
    if 3.0 <= geodesic_m < 5.0:
        return "medium"
    if 5.0 <= geodesic_m <= 10.0:
        return "hard"
    return None


@dataclass
class Episode:
    start: Pose
    goal: tuple[int, int]
    goal_observation: Observation
    shortest_m: float
    tier: str

    def to_dict(self) -> dict:
        return {
            "start": [self.start.row, self.start.col, self.start.heading],
            "goal": list(self.goal),
            "shortest_m": self.shortest_m,
            "tier": self.tier,
        }


def generate_episodes(world: World, encoder: OracleEncoder, n: int, tier: str,
                      rng: np.random.Generator,
                      detector: DetectorConfig | None = None,
                      max_tries: int = 200_000) -> list[Episode]:
    """Rejection-sample start/goal pairs whose geodesic falls in the tier."""
    if tier not in TIER_BOUNDS:
        raise ValueError(f"unknown tier {tier!r}")
    component = sorted(world.main_component())
    episodes: list[Episode] = []
    fields: dict[tuple[int, int], np.ndarray] = {}
    for _ in range(max_tries):
        if len(episodes) >= n:
            break
        start = component[int(rng.integers(len(component)))]
        goal = component[int(rng.integers(len(component)))]
        if goal not in fields:
            fields[goal] = distance_field(world, goal)
        length = float(fields[goal][start]) * CELL_M
        if classify_difficulty(length) != tier:
            continue
        pose = Pose(start[0], start[1], int(rng.integers(4)))
        goal_obs = observe(world, Pose(goal[0], goal[1], 0), encoder, detector, rng)
        episodes.append(Episode(start=pose, goal=goal, goal_observation=goal_obs,
                                shortest_m=length, tier=tier))
    if len(episodes) < n:
        raise WorldGenerationError(
            f"could not sample {n} {tier} episodes in this world")
    return episodes


def spl(successes, shortest_lengths, traveled_lengths) -> float:
    """Success weighted by shortest/max(shortest, traveled), averaged."""
    successes = list(successes)
    if not successes:
        raise ValueError("empty episode set")
    if not (len(successes) == len(shortest_lengths) == len(traveled_lengths)):
        raise ValueError("metric sequences must be aligned")
    total = 0.0
    for won, ell, p in zip(successes, shortest_lengths, traveled_lengths):
        if p < 0:
            raise ValueError("traveled length must be nonnegative")
        if won:
            total += ell / max(ell, p)
    return total / len(successes)


@dataclass
class EpisodeResult:
    tier: str
    success: bool
    shortest_m: float
    traveled_m: float
    steps: int
    final_distance_m: float
    step_log: list[dict] = field(default_factory=list)


def run_episode(agent, world: World, episode: Episode, encoder: OracleEncoder,
                detector: DetectorConfig | None = None,
                max_steps: int = 500,
                rng: np.random.Generator | None = None,
                collect_log: bool = False) -> EpisodeResult:
    rng = rng or np.random.default_rng(0)
    dist = distance_field(world, episode.goal)
    pose = episode.start
    agent.reset(world, episode)
    traveled = 0.0
    success = False
    steps = 0
    log: list[dict] = []
    for steps in range(1, max_steps + 1):
        obs = observe(world, pose, encoder, detector, rng)
        action = int(agent.act(obs))
        if collect_log:
            log.append({"step": steps, "pose": [pose.row, pose.col, pose.heading],
                        "action": ACTION_NAMES[action],
                        **getattr(agent, "last_step_info", lambda: {})()})
        if action == STOP:
            success = bool(dist[pose.row, pose.col] * CELL_M <= SUCCESS_RADIUS_M)
            break
        new_pose = step_env(world, pose, action)
        if action == FORWARD and new_pose != pose:
            traveled += CELL_M
        pose = new_pose
    return EpisodeResult(tier=episode.tier, success=success,
                         shortest_m=episode.shortest_m, traveled_m=traveled,
                         steps=steps,
                         final_distance_m=float(dist[pose.row, pose.col]) * CELL_M,
                         step_log=log)


def evaluate(agent, world: World, episodes: list[Episode], encoder: OracleEncoder,
             detector: DetectorConfig | None = None, max_steps: int = 500,
             seed: int = 0, collect_logs: bool = False):
    """Run every episode; success needs an explicit STOP within 1 m."""
    if not episodes:
        raise ValueError("empty episode set")
    results = []
    for i, episode in enumerate(episodes):
        rng = np.random.default_rng([seed, i])
        results.append(run_episode(agent, world, episode, encoder, detector,
                                   max_steps, rng, collect_logs))
    metrics = summarize(results)
    return metrics, results


def summarize(results: list[EpisodeResult]) -> dict:
    succ = [r.success for r in results]
    metrics = {
        "episodes": len(results),
        "success": float(sum(succ)) / len(results),
        "spl": spl(succ, [r.shortest_m for r in results],
                   [r.traveled_m for r in results]),
    }
    for tier in TIER_BOUNDS:
        sub = [r for r in results if r.tier == tier]
        if sub:
            metrics[f"success_{tier}"] = float(sum(r.success for r in sub)) / len(sub)
            metrics[f"spl_{tier}"] = spl([r.success for r in sub],
                                         [r.shortest_m for r in sub],
                                         [r.traveled_m for r in sub])
    return metrics
