"""Decentralized sampling-based safe controller.

Each tick the robot classifies its surrounding agents from 3-step position
tracks, rolls the learned dynamics through the already-queued (delayed)
controls to find the state where a new command will actually bite, unrolls
every discrete candidate over a short horizon, vetoes candidates whose
predicted states violate any per-agent barrier, and picks the survivor with
the best goal-driven score.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .barrier import BarrierModel
from .data import features_from_context
from .dynamics import DynamicsModel, predict_next_batch
from .world import DT, Control, RobotState, coast_step_batch


class MissingBarrierError(RuntimeError):
    """No barrier model is loaded for an encountered agent kind."""


@dataclass(frozen=True)
class AgentTrack:
    id: str
    positions: np.ndarray                 # (3, 2), oldest first, dt spacing
    kind: str | None = None               # platform name for self-declared robots
    state: RobotState | None = None       # full state, robots only

    def __post_init__(self):
        object.__setattr__(self, "positions", np.asarray(self.positions, dtype=float))
        if self.positions.shape != (3, 2):
            raise ValueError("track needs exactly 3 positions")


@dataclass
class ControllerConfig:
    candidates: np.ndarray                # (C, 2) canonical candidate set
    horizon: int = 15                     # unroll depth, steps
    static_speed_threshold: float = 0.05  # m/s
    w_v: float = 1.0
    w_g: float = 1.0
    desired_speed: float = 1.0
    delay_h: float = 0.0
    interaction_radius: float = 5.0       # agents farther than this are ignored
    dt: float = DT

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        self.candidates = np.asarray(self.candidates, dtype=float)


def classify_agent(track: AgentTrack, cfg: ControllerConfig) -> str:
    """'robot:<platform>' for self-declared robots, else mean-speed thresholding."""
    if track.kind is not None:
        return f"robot:{track.kind}"
    steps = np.diff(track.positions, axis=0)
    mean_speed = float(np.linalg.norm(steps, axis=1).mean()) / cfg.dt
    return "static" if mean_speed < cfg.static_speed_threshold else "pedestrian"


def plan_start_state(current: RobotState, queue, dyn: DynamicsModel) -> RobotState:
    """Roll the current state through the not-yet-executed control queue."""
    state = current.as_array()[None, :]
    for ctrl in queue:
        u = ctrl.as_array() if isinstance(ctrl, Control) else np.asarray(ctrl, dtype=float)
        state = predict_next_batch(dyn, state, u[None, :])
    return RobotState.from_array(state[0])


def _predicted_agent_data(track: AgentTrack, cfg: ControllerConfig, horizon: int):
    """Per-step prediction of one agent over the unroll horizon.

    Returns (kind, payload) where payload holds whatever the task features
    need at steps 1..horizon.
    """
    kind = classify_agent(track, cfg)
    if kind == "static":
        return "static", np.asarray(track.positions[-1], dtype=float)
    if kind == "pedestrian":
        vel = (track.positions[2] - track.positions[0]) / (2.0 * cfg.dt)
        # positions at steps -2 .. horizon (history windows need two past steps)
        ks = np.arange(-2, horizon + 1)
        pos = track.positions[2] + ks[:, None] * cfg.dt * vel
        return "pedestrian", pos
    if track.state is None:
        raise ValueError(f"robot track {track.id} is missing a full state")
    states = np.empty((horizon + 1, 5))
    states[0] = track.state.as_array()
    for k in range(horizon):
        states[k + 1] = coast_step_batch(states[k][None, :], cfg.dt)[0]
    return "robot", states


def filter_candidates(start: RobotState, agents, barriers: dict,
                      dyn: DynamicsModel, cfg: ControllerConfig,
                      time_offset_steps: int = 0):
    """Unroll every candidate `horizon` steps and veto any whose predicted
    states put some agent's barrier below zero.

    `time_offset_steps` shifts the agent extrapolations forward so that when
    the start state is the delay-compensated (future) robot state, the agents
    are predicted at the same wall-clock times.

    Returns (surviving candidate indices, terminal (C, 5) unrolled states,
    per-candidate worst barrier value over all steps and agents, and the
    per-candidate worst predicted clearance to any agent).  The clearance
    lets the caller pick a recovery control when every candidate is vetoed:
    below the barrier's zero level its magnitudes carry no calibrated
    meaning, so raw predicted distance is the honest ranking there.
    """
    cands = cfg.candidates
    n_cand = len(cands)
    start_pos = start.position
    nearby = []
    for track in agents:
        if np.linalg.norm(np.asarray(track.positions[-1]) - start_pos) > cfg.interaction_radius:
            continue
        kind, payload = _predicted_agent_data(track, cfg, cfg.horizon + time_offset_steps)
        task = {"static": "static", "pedestrian": "dynamic"}.get(kind, "multirobot")
        if task not in barriers:
            raise MissingBarrierError(f"no barrier model for agent kind {task!r}")
        nearby.append((task, kind, payload))

    states = np.tile(start.as_array(), (n_cand, 1))
    worst_b = np.full(n_cand, np.inf)
    worst_d = np.full(n_cand, np.inf)
    for step in range(1, cfg.horizon + 1):
        states = predict_next_batch(dyn, states, cands)
        for task, kind, payload in nearby:
            ctx = _contexts_at_step(states, task, kind, payload, step + time_offset_steps)
            b = barriers[task].value(features_from_context(task, ctx))
            worst_b = np.minimum(worst_b, b)
            d = np.linalg.norm(states[:, 0:2] -
                               _agent_position_at_step(kind, payload,
                                                       step + time_offset_steps),
                               axis=1)
            worst_d = np.minimum(worst_d, d)
    return np.where(worst_b >= 0.0)[0], states, worst_b, worst_d


def _agent_position_at_step(kind, payload, step):
    if kind == "static":
        return payload
    if kind == "pedestrian":
        return payload[step + 2]    # payload rows start at step -2
    return payload[step][0:2]


def _contexts_at_step(robot_states, task, kind, payload, step):
    n = len(robot_states)
    if task == "static":
        return np.hstack([robot_states, np.tile(payload, (n, 1))])
    if task == "dynamic":
        hist = payload[step:step + 3].ravel()  # steps step-2, step-1, step
        return np.hstack([robot_states, np.tile(hist, (n, 1))])
    other = payload[step]
    return np.hstack([robot_states, np.tile(other, (n, 1))])


RECOVERY_CLEARANCE_CAP = 0.7    # the labeled safety distance d


def recovery_control(cfg: ControllerConfig, worst_b: np.ndarray,
                     worst_d: np.ndarray) -> Control:
    """Least-bad candidate when every candidate is vetoed.

    Below the barrier's zero level its magnitudes carry no calibrated
    meaning, so candidates are ranked by worst-case predicted clearance,
    capped at the safety distance: gaining clearance beyond d buys nothing,
    and past that point the barrier value breaks the tie.
    """
    capped = np.minimum(worst_d, RECOVERY_CLEARANCE_CAP)
    best = np.lexsort((worst_b, capped))[-1]
    return Control(*cfg.candidates[int(best)])


def goal_score(terminal: RobotState, goal, cfg: ControllerConfig) -> float:
    """Velocity-tracking plus goal-reaching score; 0 is the maximum."""
    dist = math.dist((terminal.x, terminal.y), tuple(goal))
    return -cfg.w_v * abs(terminal.v - cfg.desired_speed) - cfg.w_g * dist


def select_control(current: RobotState, queue, agents, goal, barriers: dict,
                   dyn: DynamicsModel, cfg: ControllerConfig,
                   compensate_delay: bool = True) -> Control:
    """Full pipeline: delay compensation, candidate filtering, goal-score argmax.

    When every candidate is vetoed there is no certified-safe option left, so
    the controller degrades to damage limitation via `recovery_control`,
    which actively steers away from the threat instead of freezing in its
    path.
    """
    if compensate_delay:
        start = plan_start_state(current, queue, dyn)
        offset = len(queue)
    else:
        start, offset = current, 0
    survivors, terminal, worst_b, worst_d = filter_candidates(
        start, agents, barriers, dyn, cfg, time_offset_steps=offset)
    if len(survivors) == 0:
        return recovery_control(cfg, worst_b, worst_d)
    goal = np.asarray(goal, dtype=float)
    dist = np.linalg.norm(terminal[survivors, 0:2] - goal, axis=1)
    scores = -cfg.w_v * np.abs(terminal[survivors, 3] - cfg.desired_speed) - cfg.w_g * dist
    best = survivors[int(np.argmax(scores))]
    return Control(*cfg.candidates[best])
