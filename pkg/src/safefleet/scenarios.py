"""Scenario definition, seeded execution and metric computation.

A scenario is a seeded, repeatable experiment: unit tasks (each robot drives
to a fixed goal among obstacles/pedestrians) or fleet pick-and-place runs.
Rollouts are logged line-per-tick and reduced to the mean-velocity /
min-distance / path-length statistics used in the result tables.
"""
from __future__ import annotations

import io
import math
import os
from dataclasses import dataclass, field, asdict

import numpy as np
import yaml

from .barrier import BarrierModel
from .controller import AgentTrack, ControllerConfig, select_control
from .dynamics import DynamicsModel
from .fleet import Orchestrator, Task, WarehouseMap
from .world import (DT, Control, PedestrianTrack, PedestrianWalker, RobotState,
                    candidate_controls, make_platform, make_world, min_separation,
                    step_world)

STATIONARY_DISPLACEMENT = 0.005   # m per tick; slower ticks do not count as moving
COLLISION_DISTANCE = 0.5          # m; separation below this counts as a collision tick
GOAL_TOLERANCE = 0.3


@dataclass
class ScenarioConfig:
    name: str
    mode: str                      # "unit_task" | "pick_and_place"
    max_speed: float
    robots: list                   # {id, platform, start [x,y,theta], goal [x,y]}
    obstacles: list = field(default_factory=list)
    pedestrians: list = field(default_factory=list)  # {waypoints, speed, phase_jitter}
    tasks: list = field(default_factory=list)        # pick_and_place: {id, pickup, dropoff}
    map: dict | None = None        # pick_and_place: waypoints/edges/zones
    homes: dict = field(default_factory=dict)        # robot id -> charging waypoint id
    repetitions: int = 1
    seed: int = 0
    time_budget: float = 120.0
    noise_sigma: float = 0.01
    horizon: int = 15
    delay_override: float | None = None
    compensate_delay: bool = True
    obstacle_jitter: float = 0.0
    start_jitter: float = 0.0

    def __post_init__(self):
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if self.max_speed not in (0.5, 1.0, 1.5):
            raise ValueError("max speed must select a candidate-set row")

    @staticmethod
    def from_dict(raw: dict) -> "ScenarioConfig":
        return ScenarioConfig(**raw)

    def to_dict(self) -> dict:
        return asdict(self)


def load_scenario(path) -> ScenarioConfig:
    with open(path) as fh:
        return ScenarioConfig.from_dict(yaml.safe_load(fh))


def save_scenario(cfg: ScenarioConfig, path):
    with open(path, "w") as fh:
        yaml.safe_dump(cfg.to_dict(), fh, sort_keys=True)


@dataclass
class ModelBundle:
    dynamics: dict                 # platform base name -> DynamicsModel
    barriers: dict                 # task -> BarrierModel
    rejections: dict = field(default_factory=dict)

    def dynamics_for(self, platform_name: str) -> DynamicsModel:
        base = platform_name.split("#")[0]
        if base not in self.dynamics:
            raise KeyError(f"no dynamics model for platform {base!r}")
        return self.dynamics[base]


@dataclass
class Metrics:
    mean_velocity: float
    min_distance: float
    path_length: float
    success: bool
    collision_count: int


@dataclass
class RepResult:
    seed: int
    log: list                      # (t, id, kind, x, y, theta, v, omega) rows
    metrics: dict                  # robot id -> Metrics
    success: bool
    events: list = field(default_factory=list)


@dataclass
class ScenarioResult:
    config: ScenarioConfig
    reps: list


# ---------------------------------------------------------------------------
# execution

def _build_walker(spec: dict, rng) -> PedestrianWalker:
    waypoints = tuple(tuple(w) for w in spec["waypoints"])
    speeds = tuple([float(spec["speed"])] * (len(waypoints) - 1))
    walker = PedestrianWalker(PedestrianTrack(waypoints, speeds))
    jitter = float(spec.get("phase_jitter", 0.0))
    if jitter > 0:
        for _ in range(int(rng.uniform(0.0, jitter) / DT)):
            walker = walker.advanced()
    return walker


def run_single(cfg: ScenarioConfig, models: ModelBundle, seed: int) -> RepResult:
    rng = np.random.default_rng(seed)
    robots = {}
    platforms = {}
    goals = {}
    for spec in cfg.robots:
        rid = spec["id"]
        params = make_platform(spec["platform"], cfg.max_speed, cfg.delay_override)
        sx, sy, sth = spec["start"]
        if cfg.start_jitter > 0:
            sy += rng.uniform(-cfg.start_jitter, cfg.start_jitter)
        robots[rid] = (RobotState(sx, sy, sth, 0.0, 0.0), params)
        platforms[rid] = params
        if spec.get("goal") is not None:
            goals[rid] = np.asarray(spec["goal"], dtype=float)

    obstacles = [tuple(np.asarray(o, dtype=float)
                       + (rng.uniform(-cfg.obstacle_jitter, cfg.obstacle_jitter, 2)
                          if cfg.obstacle_jitter > 0 else 0.0))
                 for o in cfg.obstacles]
    pedestrians = {f"p{i}": _build_walker(spec, rng)
                   for i, spec in enumerate(cfg.pedestrians)}
    world = make_world(robots, pedestrians, obstacles,
                       noise_sigma=cfg.noise_sigma, seed=seed + 7919)

    orchestrator = None
    if cfg.mode == "pick_and_place":
        wmap = WarehouseMap(waypoints={k: tuple(v) for k, v in cfg.map["waypoints"].items()},
                            edges=[tuple(e) for e in cfg.map.get("edges", [])],
                            zones=dict(cfg.map.get("zones", {})))
        tasks = [Task(t["id"], t["pickup"], t["dropoff"]) for t in cfg.tasks]
        orchestrator = Orchestrator(wmap, tasks, cfg.homes, tolerance=GOAL_TOLERANCE)

    candidates = candidate_controls(cfg.max_speed)
    ctrl_cfgs = {rid: ControllerConfig(candidates=candidates, horizon=cfg.horizon,
                                       desired_speed=cfg.max_speed,
                                       delay_h=platforms[rid].delay_h)
                 for rid in robots}

    histories = {}
    for rid, (state, _) in robots.items():
        histories[rid] = [state.position] * 3
    for pid, walker in pedestrians.items():
        histories[pid] = [walker.position()] * 3

    log = []
    separations = {rid: [] for rid in robots}
    reached = set()
    steps = int(round(cfg.time_budget / DT))
    for _ in range(steps):
        positions = {rid: world.robot_state(rid).position for rid in sorted(robots)}
        if orchestrator is not None:
            directives = orchestrator.step(world.time, positions)
            for rid, (goal, hold) in directives.items():
                goals[rid] = np.asarray(goal, dtype=float)
                ctrl_cfgs[rid].desired_speed = 0.0 if (hold or rid not in orchestrator.active) \
                    else cfg.max_speed

        commands = {}
        for rid in sorted(robots):
            state = world.robot_state(rid)
            cc = ctrl_cfgs[rid]
            if cfg.mode == "unit_task":
                cc.desired_speed = 0.0 if rid in reached else cfg.max_speed
            # approach slowdown: tracking full speed right at the goal makes a
            # full-speed orbit score better than landing inside the tolerance
            goal_dist = float(np.linalg.norm(goals[rid] - state.position))
            cc.desired_speed = min(cc.desired_speed, max(0.3, goal_dist))
            agents = _surrounding_tracks(world, histories, rid)
            commands[rid] = select_control(state, world.robots[rid].queue, agents,
                                           goals[rid], models.barriers,
                                           models.dynamics_for(platforms[rid].name), cc,
                                           compensate_delay=cfg.compensate_delay)

        _log_tick(log, world)
        for rid in robots:
            separations[rid].append(min_separation(world, rid))
        world = step_world(world, commands)
        for rid in robots:
            histories[rid] = histories[rid][1:] + [world.robot_state(rid).position]
        for pid in pedestrians:
            histories[pid] = histories[pid][1:] + [world.pedestrians[pid].position()]

        if cfg.mode == "unit_task":
            for rid in robots:
                if rid not in reached and \
                        np.linalg.norm(world.robot_state(rid).position - goals[rid]) <= GOAL_TOLERANCE:
                    reached.add(rid)
            if len(reached) == len(robots):
                _log_tick(log, world)
                for rid in robots:
                    separations[rid].append(min_separation(world, rid))
                break
        elif orchestrator.all_done():
            _log_tick(log, world)
            for rid in robots:
                separations[rid].append(min_separation(world, rid))
            break

    if cfg.mode == "unit_task":
        success = len(reached) == len(robots)
    else:
        success = orchestrator.all_done()

    metrics = {}
    for rid in robots:
        m = compute_metrics(log, rid)
        metrics[rid] = Metrics(mean_velocity=m.mean_velocity,
                               min_distance=min(separations[rid]) if separations[rid] else math.inf,
                               path_length=m.path_length,
                               success=success,
                               collision_count=sum(1 for s in separations[rid]
                                                   if s < COLLISION_DISTANCE))
    events = orchestrator.events if orchestrator is not None else []
    return RepResult(seed=seed, log=log, metrics=metrics, success=success, events=events)


def _surrounding_tracks(world, histories, rid):
    tracks = []
    for oid in sorted(world.robots):
        if oid == rid:
            continue
        agent = world.robots[oid]
        tracks.append(AgentTrack(id=oid, positions=np.stack(histories[oid]),
                                 kind=agent.params.name, state=agent.state))
    for pid in sorted(world.pedestrians):
        tracks.append(AgentTrack(id=pid, positions=np.stack(histories[pid])))
    for i, obs in enumerate(world.obstacles):
        pos = np.asarray(obs, dtype=float)
        tracks.append(AgentTrack(id=f"o{i}", positions=np.stack([pos, pos, pos])))
    return tracks


def _log_tick(log, world):
    for rid in sorted(world.robots):
        s = world.robots[rid].state
        log.append((world.time, rid, "robot", s.x, s.y, s.theta, s.v, s.omega))
    for pid in sorted(world.pedestrians):
        p = world.pedestrians[pid].position()
        log.append((world.time, pid, "pedestrian", float(p[0]), float(p[1]), 0.0, 0.0, 0.0))
    for i, obs in enumerate(world.obstacles):
        log.append((world.time, f"o{i}", "obstacle", float(obs[0]), float(obs[1]), 0.0, 0.0, 0.0))


def run_scenario(cfg: ScenarioConfig, models: ModelBundle) -> ScenarioResult:
    reps = [run_single(cfg, models, cfg.seed + 1000 * r) for r in range(cfg.repetitions)]
    return ScenarioResult(config=cfg, reps=reps)


# ---------------------------------------------------------------------------
# metrics and reports

def compute_metrics(log, robot_id) -> Metrics:
    """Path length, moving-only mean velocity and min separation from a tick log."""
    if not log:
        raise ValueError("empty tick log")
    by_time = {}
    own = []
    for row in log:
        t = row[0]
        if row[1] == robot_id:
            own.append(row)
        else:
            by_time.setdefault(t, []).append(row)
    if not own:
        raise ValueError(f"robot {robot_id!r} not in log")
    own.sort(key=lambda r: r[0])
    xy = np.array([(r[3], r[4]) for r in own])
    steps = np.linalg.norm(np.diff(xy, axis=0), axis=1)
    moving = steps >= STATIONARY_DISPLACEMENT
    path = float(steps[moving].sum())   # sub-threshold jitter is not travel
    dt = DT
    moving_time = float(moving.sum()) * dt
    mean_v = path / moving_time if moving_time > 0 else 0.0

    min_dist = math.inf
    collisions = 0
    for row in own:
        others = by_time.get(row[0], [])
        if not others:
            continue
        dists = [math.dist((row[3], row[4]), (o[3], o[4])) for o in others]
        d = min(dists)
        min_dist = min(min_dist, d)
        if d < COLLISION_DISTANCE:
            collisions += 1
    return Metrics(mean_velocity=mean_v, min_distance=min_dist, path_length=path,
                   success=True, collision_count=collisions)


def serialize_log(log) -> str:
    buf = io.StringIO()
    for t, aid, kind, x, y, th, v, om in log:
        buf.write(f"{t:.1f},{aid},{kind},{x:.6f},{y:.6f},{th:.6f},{v:.6f},{om:.6f}\n")
    return buf.getvalue()


REPORT_HEADER = ("type,n_obstacles,max_speed,n_robots,mean_velocity,mean_velocity_std,"
                 "distance,distance_std,path_length,success_rate\n")


def summarize(result: ScenarioResult):
    """Rep-averaged scalars for one scenario (averaged over robots too)."""
    vels, dists, paths, succ = [], [], [], []
    for rep in result.reps:
        ms = list(rep.metrics.values())
        vels.append(np.mean([m.mean_velocity for m in ms]))
        dists.append(np.mean([m.min_distance for m in ms]))
        paths.append(np.mean([m.path_length for m in ms]))
        succ.append(rep.success)
    return {
        "mean_velocity": float(np.mean(vels)),
        "mean_velocity_std": float(np.std(vels)),
        "distance": float(np.mean(dists)),
        "distance_std": float(np.std(dists)),
        "path_length": float(np.mean(paths)),
        "success_rate": float(np.mean(succ)),
    }


def emit_report(results, out_dir):
    """Comma-separated summary table plus per-run trajectory files."""
    if not results:
        raise ValueError("need at least one scenario result")
    os.makedirs(out_dir, exist_ok=True)
    table_path = os.path.join(out_dir, "table.csv")
    with open(table_path, "w") as fh:
        fh.write(REPORT_HEADER)
        for res in results:
            cfg = res.config
            s = summarize(res)
            kind = "static" if cfg.obstacles and not cfg.pedestrians else \
                ("dynamic" if cfg.mode == "unit_task" else "pick_and_place")
            n_obs = len(cfg.obstacles) + len(cfg.pedestrians)
            fh.write(f"{kind},{n_obs},{cfg.max_speed:g},{len(cfg.robots)},"
                     f"{s['mean_velocity']:.4f},{s['mean_velocity_std']:.4f},"
                     f"{s['distance']:.4f},{s['distance_std']:.4f},"
                     f"{s['path_length']:.4f},{s['success_rate']:.2f}\n")
    for res in results:
        for k, rep in enumerate(res.reps):
            path = os.path.join(out_dir, f"traj_{res.config.name}_rep{k}.csv")
            with open(path, "w") as fh:
                fh.write("time,id,x,y\n")
                for row in rep.log:
                    fh.write(f"{row[0]:.1f},{row[1]},{row[3]:.6f},{row[4]:.6f}\n")
    return table_path


# ---------------------------------------------------------------------------
# canonical scenario builders (desk-scale analogues of the result tables)

LANES = {1: [6.0], 2: [4.5, 7.5], 3: [3.0, 6.0, 9.0]}
PLATFORM_ORDER = ["freight", "jackal", "megarover"]


def _robot_specs(n_robots):
    specs = []
    for i, lane in enumerate(LANES[n_robots]):
        specs.append({"id": f"r{i}", "platform": PLATFORM_ORDER[i],
                      "start": [1.5, lane, 0.0], "goal": [10.5, lane]})
    return specs


def unit_task_config(task_type: str, n_robots: int, max_speed: float,
                     n_pedestrians: int = 0, seed: int = 0,
                     repetitions: int = 10) -> ScenarioConfig:
    """Static (2 obstacles) or dynamic (1-2 crossing pedestrians) unit tasks."""
    robots = _robot_specs(n_robots)
    obstacles, peds = [], []
    if task_type == "static":
        obstacles = [[4.5, 5.3], [7.5, 6.7]]
        name = f"static_{n_robots}r_{max_speed:g}"
    elif task_type == "dynamic":
        ped_speed = round(0.5 * max_speed, 3)
        all_peds = [
            {"waypoints": [[5.0, 10.5], [5.0, 1.5]], "speed": ped_speed, "phase_jitter": 8.0},
            {"waypoints": [[7.5, 1.5], [7.5, 10.5]], "speed": ped_speed, "phase_jitter": 8.0},
        ]
        peds = all_peds[:n_pedestrians]
        name = f"dynamic{n_pedestrians}_{n_robots}r_{max_speed:g}"
    else:
        raise ValueError(f"unknown unit task type {task_type!r}")
    return ScenarioConfig(name=name, mode="unit_task", max_speed=max_speed,
                          robots=robots, obstacles=obstacles, pedestrians=peds,
                          repetitions=repetitions, seed=seed,
                          obstacle_jitter=0.15, start_jitter=0.1)


def head_to_head_config(max_speed: float = 1.0, seed: int = 0,
                        repetitions: int = 10) -> ScenarioConfig:
    robots = [
        {"id": "r0", "platform": "freight", "start": [1.5, 6.0, 0.0], "goal": [10.5, 6.0]},
        {"id": "r1", "platform": "jackal", "start": [10.5, 6.0, math.pi], "goal": [1.5, 6.0]},
    ]
    return ScenarioConfig(name=f"head_to_head_{max_speed:g}", mode="unit_task",
                          max_speed=max_speed, robots=robots,
                          repetitions=repetitions, seed=seed, start_jitter=0.1)


def default_warehouse_map() -> dict:
    waypoints = {
        "c0": (1.2, 2.2), "c1": (1.2, 4.8), "c2": (1.2, 7.4), "c3": (1.2, 10.0),
        "p0": (10.8, 10.2), "p1": (10.8, 8.0), "p2": (10.8, 5.8), "p3": (10.8, 3.6),
        "d0": (3.5, 1.0), "d1": (5.5, 1.0), "d2": (7.5, 1.0), "d3": (9.5, 1.0),
        "j0": (6.0, 6.0),
    }
    ids = list(waypoints)
    edges = [(ids[i], ids[i + 1]) for i in range(len(ids) - 1)]
    zones = {**{f"c{i}": "charging" for i in range(4)},
             **{f"p{i}": "pickup" for i in range(4)},
             **{f"d{i}": "dropoff" for i in range(4)},
             "j0": "junction"}
    return {"waypoints": {k: list(v) for k, v in waypoints.items()},
            "edges": [list(e) for e in edges], "zones": zones}


def pick_and_place_config(n_pedestrians: int = 0, max_speed: float = 1.0,
                          seed: int = 0, repetitions: int = 5) -> ScenarioConfig:
    wmap = default_warehouse_map()
    platforms = ["freight", "jackal", "megarover", "megarover#2"]
    robots, homes = [], {}
    for i in range(4):
        wx, wy = wmap["waypoints"][f"c{i}"]
        robots.append({"id": f"r{i}", "platform": platforms[i],
                       "start": [wx, wy, 0.0], "goal": None})
        homes[f"r{i}"] = f"c{i}"
    tasks = [{"id": f"t{i}", "pickup": f"p{i}", "dropoff": f"d{i}"} for i in range(4)]
    ped_speed = round(0.5 * max_speed, 3)
    all_peds = [
        {"waypoints": [[4.0, 9.5], [8.0, 3.0]], "speed": ped_speed, "phase_jitter": 10.0},
        {"waypoints": [[8.5, 9.0], [3.5, 3.5]], "speed": ped_speed, "phase_jitter": 10.0},
    ]
    return ScenarioConfig(name=f"pickplace_{n_pedestrians}p_{max_speed:g}",
                          mode="pick_and_place", max_speed=max_speed, robots=robots,
                          pedestrians=all_peds[:n_pedestrians], tasks=tasks,
                          map=wmap, homes=homes, repetitions=repetitions, seed=seed,
                          time_budget=600.0)
