"""Deterministic discrete-time planar world.

Differential-drive robots with per-platform acceleration limits and a FIFO
control-delay queue, plus scripted waypoint pedestrians.  Used both for data
collection and for scenario evaluation.  Collision is a distance predicate
only; there is no contact resolution.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

DT = 0.1  # global tick, seconds

# Discrete control candidates per max-speed setting.  The full candidate set
# is the Cartesian product of the linear and angular rows (15 / 28 / 35).
LINEAR_CANDIDATES = {
    0.5: (0.0, 0.3, 0.5),
    1.0: (0.0, 0.3, 0.5, 1.0),
    1.5: (0.0, 0.3, 0.5, 1.0, 1.5),
}
ANGULAR_CANDIDATES = {
    0.5: (-0.8, -0.4, 0.0, 0.4, 0.8),
    1.0: (-1.2, -0.8, -0.4, 0.0, 0.4, 0.8, 1.2),
    1.5: (-1.2, -0.8, -0.4, 0.0, 0.4, 0.8, 1.2),
}


def candidate_controls(max_speed: float) -> np.ndarray:
    """Canonical (C, 2) candidate array: linear-major, angular ascending."""
    if max_speed not in LINEAR_CANDIDATES:
        raise ValueError(f"no candidate set for max speed {max_speed}")
    lin = LINEAR_CANDIDATES[max_speed]
    ang = ANGULAR_CANDIDATES[max_speed]
    return np.array([(v, w) for v in lin for w in ang], dtype=float)


def wrap_angle(theta):
    """Wrap angle(s) to (-pi, pi]."""
    return -((-np.asarray(theta) + math.pi) % (2.0 * math.pi) - math.pi)


@dataclass(frozen=True)
class RobotState:
    x: float
    y: float
    theta: float
    v: float
    omega: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta, self.v, self.omega])

    @staticmethod
    def from_array(a) -> "RobotState":
        return RobotState(float(a[0]), float(a[1]), float(a[2]), float(a[3]), float(a[4]))

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(frozen=True)
class Control:
    u_v: float
    u_omega: float

    def as_array(self) -> np.ndarray:
        return np.array([self.u_v, self.u_omega])


@dataclass(frozen=True)
class PlatformParams:
    name: str
    m_v: float          # max linear acceleration, m/s^2
    m_omega: float      # max angular acceleration, rad/s^2
    delay_h: float      # control delay, seconds (integer multiple of DT)
    max_speed: float    # commanded linear speed cap, m/s
    max_omega: float = 1.5

    def __post_init__(self):
        if self.m_v <= 0 or self.m_omega <= 0:
            raise ValueError("acceleration limits must be positive")
        k = self.delay_h / DT
        if abs(k - round(k)) > 1e-9:
            raise ValueError("delay_h must be an integer multiple of dt")

    @property
    def delay_steps(self) -> int:
        return int(round(self.delay_h / DT))


# Measured platform characteristics (acceleration limits and control delay).
_PLATFORM_SPECS = {
    "freight": dict(m_v=2.15, m_omega=2.4, delay_h=0.1),
    "jackal": dict(m_v=2.15, m_omega=2.4, delay_h=0.1),
    "megarover": dict(m_v=0.6, m_omega=2.4, delay_h=0.2),
}


def make_platform(name: str, max_speed: float, delay_h: float | None = None) -> PlatformParams:
    base = name.split("#")[0]  # allow freight#2 style duplicate ids
    if base not in _PLATFORM_SPECS:
        raise ValueError(f"unknown platform {name!r}")
    spec = dict(_PLATFORM_SPECS[base])
    if delay_h is not None:
        spec["delay_h"] = delay_h
    return PlatformParams(name=name, max_speed=max_speed, **spec)


def kinematics_step_batch(states: np.ndarray, controls: np.ndarray,
                          m_v: float, m_omega: float,
                          max_speed: float, max_omega: float,
                          dt: float = DT) -> np.ndarray:
    """Differential-drive step on (N, 5) states under (N, 2) target-velocity controls.

    Velocity change per step is clamped symmetrically to +-accel*dt; speeds are
    clamped to the platform caps afterwards.
    """
    x, y, th, v, om = states.T
    uv, uw = controls.T
    nxt = np.empty_like(states)
    nxt[:, 0] = x + np.cos(th) * v * dt
    nxt[:, 1] = y + np.sin(th) * v * dt
    nxt[:, 2] = wrap_angle(th + om * dt)
    nxt[:, 3] = np.clip(v + np.clip(uv - v, -m_v * dt, m_v * dt), -max_speed, max_speed)
    nxt[:, 4] = np.clip(om + np.clip(uw - om, -m_omega * dt, m_omega * dt), -max_omega, max_omega)
    return nxt


def coast_step_batch(states: np.ndarray, dt: float = DT) -> np.ndarray:
    """Advance (N, 5) states holding v and omega constant (uncontrolled agent)."""
    x, y, th, v, om = states.T
    nxt = states.copy()
    nxt[:, 0] = x + np.cos(th) * v * dt
    nxt[:, 1] = y + np.sin(th) * v * dt
    nxt[:, 2] = wrap_angle(th + om * dt)
    return nxt


def apply_ground_truth_dynamics(state: RobotState, control: Control,
                                params: PlatformParams, dt: float = DT,
                                velocity_noise: tuple[float, float] = (0.0, 0.0)) -> RobotState:
    """One simulator tick of the differential-drive ground truth."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = state.x + math.cos(state.theta) * state.v * dt
    y = state.y + math.sin(state.theta) * state.v * dt
    th = float(wrap_angle(state.theta + state.omega * dt))
    dv = min(max(control.u_v - state.v, -params.m_v * dt), params.m_v * dt)
    dw = min(max(control.u_omega - state.omega, -params.m_omega * dt), params.m_omega * dt)
    v = state.v + dv + velocity_noise[0]
    om = state.omega + dw + velocity_noise[1]
    v = min(max(v, -params.max_speed), params.max_speed)
    om = min(max(om, -params.max_omega), params.max_omega)
    return RobotState(x, y, th, v, om)


@dataclass(frozen=True)
class PedestrianTrack:
    waypoints: tuple          # ((x, y), ...) at least 2, consecutive distinct
    speeds: tuple             # m/s per segment, positive

    def __post_init__(self):
        if len(self.waypoints) < 2:
            raise ValueError("track needs at least two waypoints")
        if len(self.speeds) != len(self.waypoints) - 1:
            raise ValueError("need one speed per segment")
        for (a, b) in zip(self.waypoints[:-1], self.waypoints[1:]):
            if math.dist(a, b) < 1e-9:
                raise ValueError("consecutive waypoints must be distinct")
        if any(s <= 0 for s in self.speeds):
            raise ValueError("segment speeds must be positive")


@dataclass(frozen=True)
class PedestrianWalker:
    """Position along a track; ping-pongs between the track ends."""
    track: PedestrianTrack
    segment: int = 0
    progress: float = 0.0     # meters along current segment
    forward: bool = True

    def position(self) -> np.ndarray:
        a = np.array(self.track.waypoints[self.segment], dtype=float)
        b = np.array(self.track.waypoints[self.segment + 1], dtype=float)
        if not self.forward:
            a, b = b, a
        length = float(np.linalg.norm(b - a))
        return a + (b - a) * (self.progress / length)

    def advanced(self, dt: float = DT) -> "PedestrianWalker":
        seg, prog, fwd = self.segment, self.progress, self.forward
        remaining = self.track.speeds[seg] * dt
        while remaining > 0:
            a = self.track.waypoints[seg]
            b = self.track.waypoints[seg + 1]
            length = math.dist(a, b)
            room = length - prog
            if remaining < room:
                prog += remaining
                remaining = 0.0
            else:
                remaining -= room
                prog = 0.0
                if fwd:
                    if seg + 1 < len(self.track.waypoints) - 1:
                        seg += 1
                    else:
                        fwd = False
                else:
                    if seg > 0:
                        seg -= 1
                    else:
                        fwd = True
        return PedestrianWalker(self.track, seg, prog, fwd)


@dataclass(frozen=True)
class RobotAgent:
    state: RobotState
    params: PlatformParams
    queue: tuple              # pending controls, oldest first; len == delay_steps


@dataclass
class WorldState:
    time: float
    robots: dict              # id -> RobotAgent
    pedestrians: dict         # id -> PedestrianWalker
    obstacles: list           # [(x, y), ...]
    dt: float = DT
    noise_sigma: float = 0.0
    rng: np.random.Generator = None

    def robot_state(self, robot_id) -> RobotState:
        return self.robots[robot_id].state

    def pedestrian_position(self, ped_id) -> np.ndarray:
        return self.pedestrians[ped_id].position()


def make_world(robots: dict, pedestrians: dict | None = None,
               obstacles: list | None = None, noise_sigma: float = 0.0,
               seed: int = 0, dt: float = DT) -> WorldState:
    """robots: id -> (RobotState, PlatformParams).  Delay queues start with stop controls."""
    agents = {}
    for rid, (state, params) in robots.items():
        queue = tuple(Control(0.0, 0.0) for _ in range(params.delay_steps))
        agents[rid] = RobotAgent(state, params, queue)
    return WorldState(time=0.0, robots=agents, pedestrians=dict(pedestrians or {}),
                      obstacles=list(obstacles or []), dt=dt, noise_sigma=noise_sigma,
                      rng=np.random.default_rng(seed))


def step_world(world: WorldState, commands: dict) -> WorldState:
    """Advance one tick: queue new commands, apply each queue's oldest entry."""
    unknown = set(commands) - set(world.robots)
    if unknown:
        raise KeyError(f"unknown robot ids: {sorted(unknown)}")
    robots = {}
    for rid in sorted(world.robots):
        agent = world.robots[rid]
        cmd = commands.get(rid, Control(0.0, 0.0))
        queue = agent.queue + (cmd,)
        applied, queue = queue[0], queue[1:]
        noise = (0.0, 0.0)
        if world.noise_sigma > 0:
            noise = tuple(world.rng.normal(0.0, world.noise_sigma, 2))
        state = apply_ground_truth_dynamics(agent.state, applied, agent.params,
                                            world.dt, velocity_noise=noise)
        robots[rid] = RobotAgent(state, agent.params, queue)
    peds = {pid: w.advanced(world.dt) for pid, w in world.pedestrians.items()}
    return WorldState(time=world.time + world.dt, robots=robots, pedestrians=peds,
                      obstacles=world.obstacles, dt=world.dt,
                      noise_sigma=world.noise_sigma, rng=world.rng)


def min_separation(world: WorldState, robot_id) -> float:
    """Distance from the robot to the nearest other agent or obstacle; inf if alone."""
    if robot_id not in world.robots:
        raise KeyError(f"unknown robot id {robot_id!r}")
    p = world.robots[robot_id].state.position
    best = math.inf
    for rid, agent in world.robots.items():
        if rid == robot_id:
            continue
        best = min(best, float(np.linalg.norm(agent.state.position - p)))
    for walker in world.pedestrians.values():
        best = min(best, float(np.linalg.norm(walker.position() - p)))
    for obs in world.obstacles:
        best = min(best, float(np.linalg.norm(np.asarray(obs, dtype=float) - p)))
    return best
