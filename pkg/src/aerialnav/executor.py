"""Closed-loop navigation executor.

Two activities share one simulated clock: a command sampler at the control
rate, and a decision producer at the policy rate whose answers arrive after
a modeled latency.  Until an answer lands the sampler keeps flying the
previous trajectory; a new trajectory replaces the active one as a whole.
"""
from __future__ import annotations

import logging
import math
import time as _time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .episode import CommandRecord, EpisodeLog, Frame, TrajectoryRecord
from .errors import ConnectionLost, Infeasible
from .geometry import wrap_yaw
from .perception import backproject, merge_clouds, observed_free
from .policy import LatencyModel, NavDecision, Observation
from .safety import RefineConfig, dense_samples, refine, sample_command
from .trajectory import evaluate_many, hover, init_straight, reallocate_time
from .world import SimState, check_collision, render_depth, step_plant

log = logging.getLogger(__name__)


class ExecState(Enum):
    IDLE = "IDLE"
    NAVIGATING = "NAVIGATING"
    REPLANNING = "REPLANNING"
    TASK_COMPLETE = "TASK_COMPLETE"


class Event(Enum):
    DecisionReady = "DecisionReady"
    Complete = "Complete"
    ReplanRequested = "ReplanRequested"
    TrajectoryExhausted = "TrajectoryExhausted"
    RefineInfeasible = "RefineInfeasible"
    Reset = "Reset"


TRANSITIONS = {
    (ExecState.IDLE, Event.DecisionReady): ExecState.NAVIGATING,
    (ExecState.NAVIGATING, Event.Complete): ExecState.TASK_COMPLETE,
    (ExecState.NAVIGATING, Event.ReplanRequested): ExecState.REPLANNING,
    (ExecState.NAVIGATING, Event.TrajectoryExhausted): ExecState.REPLANNING,
    (ExecState.NAVIGATING, Event.RefineInfeasible): ExecState.REPLANNING,
    (ExecState.NAVIGATING, Event.DecisionReady): ExecState.NAVIGATING,
    (ExecState.REPLANNING, Event.DecisionReady): ExecState.NAVIGATING,
    (ExecState.REPLANNING, Event.Complete): ExecState.TASK_COMPLETE,
}


def step_state_machine(state: ExecState, event: Event) -> ExecState:
    """Total transition function; undefined pairs keep the state and log a warning."""
    if state is ExecState.TASK_COMPLETE:
        return ExecState.IDLE if event is Event.Reset else state
    if event is Event.Reset:
        return ExecState.IDLE
    nxt = TRANSITIONS.get((state, event))
    if nxt is None:
        log.warning("ignoring %s in state %s", event.value, state.value)
        return state
    return nxt


@dataclass(frozen=True)
class ExecutorConfig:
    control_rate: float = 30.0
    policy_rate: float = 2.5
    record_rate: float = 10.0
    latency: LatencyModel = field(default_factory=LatencyModel)
    refine: RefineConfig = field(default_factory=RefineConfig)
    knot_span: float | None = None  # None: 0.6 v_max / a_max clipped to [0.1, 0.5]
    stride: int = 2
    voxel_size: float = 0.1
    horizon: float = 5.0
    waypoint_backoff: tuple = (1.0, 0.75, 0.5, 0.25)
    turn_in_place: float = 0.6  # rad; larger heading errors rotate before translating
    # s of each new plan that must lie in observed free space; None covers one
    # decision period plus latency plus a full stop
    commit_horizon: float | None = None
    commit_exempt: float = 0.3  # m around the vehicle excused from that test
    view_memory: int = 24  # recent depth views kept for planning
    scan_offsets: tuple = (0.8, -0.8, 1.4, -1.4)  # rad; heading sweep while no plan is found
    record_depth: bool = True
    timeout_s: float | None = None  # None: scenario value
    wall_clock: bool = False  # pace ticks in real time, policy on a worker thread

    def ticks(self, seconds: float) -> int:
        return math.ceil(seconds * self.control_rate - 1e-9)


class _Clock:
    def __init__(self):
        self.totals = {}

    def add(self, stage, started):
        self.totals[stage] = self.totals.get(stage, 0.0) + (_time.perf_counter() - started) * 1e3


def _stop_point(state: SimState, a_max: float):
    v = state.velocity
    speed = float(np.linalg.norm(v))
    return state.position + v * (speed / (2.0 * a_max))


class _Episode:
    def __init__(self, scenario, policy, config: ExecutorConfig):
        self.sc = scenario
        self.policy = policy
        self.cfg = config
        lim = scenario.limits
        self.limits = lim
        self.dt = 1.0 / config.control_rate
        self.knot = config.knot_span or min(0.5, max(0.1, 0.6 * lim.v_max / lim.a_max))
        self.clock = _Clock()
        self.commit = config.commit_horizon
        if self.commit is None:
            self.commit = 1.0 / config.policy_rate + config.latency.latency + lim.v_max / lim.a_max
        self.log = EpisodeLog(scenario.name, scenario.seed, config.control_rate, config.policy_rate,
                              config.record_rate, world=[p.to_dict() for p in scenario.world],
                              goals=[list(map(float, g.position)) for g in scenario.goals])
        self.state = SimState.at_rest(scenario.start)
        self.exec_state = ExecState.IDLE
        self.generation = -1
        self.traj = None
        self.traj_kind = "hover"
        self._swap(hover(scenario.start.position, self.knot, 0.0), "hover", 0.0)
        self.desired_yaw = scenario.start.yaw
        self.cmd_yaw = scenario.start.yaw
        self.cmd_accel = np.zeros(3)
        self.last_decision = None
        self.exhausted = False
        self.views = deque(maxlen=max(1, config.view_memory))
        self.stuck = 0
        self.scan_heading = None

    # -- bookkeeping -------------------------------------------------------
    def _event(self, t, event: Event):
        before = self.exec_state
        self.exec_state = step_state_machine(before, event)
        self.log.events.append({"time": t, "type": "transition", "event": event.value,
                                "from": before.value, "to": self.exec_state.value})

    def _swap(self, traj, kind, t):
        self.generation += 1
        self.traj = traj
        self.traj_kind = kind
        self.exhausted = False
        self.log.trajectories.append(TrajectoryRecord(self.generation, t, traj.start_time, traj.dt,
                                                      traj.control_points.tolist(), kind))

    # -- perception and planning ---------------------------------------------
    def _sense(self, t):
        started = _time.perf_counter()
        cam_pose = self.sc.camera.pose_in_world(self.state.pose)
        depth = render_depth(self.sc.world, self.sc.camera, cam_pose, t)
        self.clock.add("render", started)
        started = _time.perf_counter()
        cloud = backproject(depth, self.sc.camera, cam_pose, self.cfg.stride, self.cfg.voxel_size, self.cfg.horizon)
        self.views.append((depth, cam_pose, cloud))
        if len(self.views) > 1:
            cloud = merge_clouds([v[2] for v in self.views], self.cfg.voxel_size)
        self.clock.add("perception", started)
        return depth, cloud

    def _in_view(self, traj) -> bool:
        """The committed prefix of ``traj`` stays where recent depth images saw free space."""
        span = min(traj.duration, self.commit)
        n = max(2, math.ceil(span / 0.05) + 1)
        pos, _, _, _ = evaluate_many(traj, np.linspace(0.0, span, n))
        pending = pos[np.linalg.norm(pos - self.state.position, axis=1) > self.cfg.commit_exempt]
        for depth, cam_pose, _ in reversed(self.views):
            if len(pending) == 0:
                break
            pending = pending[~observed_free(pending, depth, self.sc.camera, cam_pose)]
        return len(pending) == 0

    def _plan(self, waypoint, cloud, t):
        pos = self.state.position
        wp = np.asarray(waypoint, dtype=float)
        started = _time.perf_counter()
        try:
            for frac in self.cfg.waypoint_backoff:
                target = pos + frac * (wp - pos)
                if frac < 1.0 and np.linalg.norm(target - pos) < self.cfg.refine.s_clear:
                    break
                traj = init_straight(self.state, self.cmd_accel, target, self.limits, self.knot, start_time=t)
                try:
                    return refine(traj, cloud, self.cfg.refine, self.limits, admissible=self._in_view)
                except Infeasible:
                    continue
            return None
        finally:
            self.clock.add("refine", started)

    def _stop(self, t, cloud=None):
        target = _stop_point(self.state, self.limits.a_max)
        traj = init_straight(self.state, self.cmd_accel, target, self.limits, self.knot, start_time=t)
        out = None
        if cloud is not None:
            try:
                out = refine(traj, cloud, self.cfg.refine, self.limits)
            except Infeasible:
                pass
        if out is None:
            out = reallocate_time(traj, self.limits.v_max, self.limits.a_max)
        self._swap(out, "stop", t)

    def _remaining_is_safe(self, cloud, t) -> bool:
        traj = self.traj
        local = t - traj.start_time
        if local >= traj.duration or len(cloud) == 0:
            return True
        s_min = self.cfg.refine.s_min
        samples = dense_samples(traj, self.cfg.refine.verify_spacing)
        times = np.linspace(0.0, traj.duration, len(samples))
        ahead = samples[times >= local]
        if len(ahead) == 0:
            return True
        dist, _ = cloud.grid(s_min).nearest(ahead)
        return bool(dist.min() >= s_min)

    def _handle_decision(self, decision: NavDecision, cloud, t) -> bool:
        """Apply an arrived decision; True when the task is complete."""
        self.log.events.append({"time": t, "type": "decision", "seq": decision.seq,
                                "waypoint": list(decision.waypoint), "yaw": decision.yaw,
                                "complete": decision.complete, "replan": decision.replan})
        if decision.complete:
            self._event(t, Event.Complete)
            return self.exec_state is ExecState.TASK_COMPLETE
        if decision.replan and self.exec_state is ExecState.NAVIGATING:
            self._event(t, Event.ReplanRequested)
        self.last_decision = decision
        if self.scan_heading is not None:
            if abs(wrap_yaw(self.scan_heading - self.state.pose.yaw)) > 0.1:
                # still turning to look around; planning waits for the new view
                self._event(t, Event.DecisionReady)
                return False
            self.scan_heading = None
        self.desired_yaw = decision.yaw
        pos = self.state.position
        travel = np.asarray(decision.waypoint) - pos
        if math.hypot(travel[0], travel[1]) > self.cfg.refine.s_clear:
            bearing = math.atan2(travel[1], travel[0])
            if abs(wrap_yaw(bearing - self.state.pose.yaw)) > self.cfg.turn_in_place:
                # the camera has not seen where we are going yet: face it first
                self.desired_yaw = wrap_yaw(bearing)
                self._event(t, Event.DecisionReady)
                self._stop(t, cloud)
                return False
        traj = self._plan(decision.waypoint, cloud, t)
        self._event(t, Event.DecisionReady)
        if traj is None:
            self._event(t, Event.RefineInfeasible)
            self._stop(t, cloud)
            # look around so the next attempt has more observed space to work with
            offsets = self.cfg.scan_offsets
            if offsets:
                self.scan_heading = wrap_yaw(decision.yaw + offsets[self.stuck % len(offsets)])
                self.desired_yaw = self.scan_heading
            self.stuck += 1
        else:
            self.stuck = 0
            self._swap(traj, "plan", t)
        return False

    def _reverify(self, cloud, t):
        if self.traj_kind != "plan" or self.exec_state is not ExecState.NAVIGATING:
            return
        started = _time.perf_counter()
        safe = self._remaining_is_safe(cloud, t)
        self.clock.add("verify", started)
        if safe:
            return
        self.log.events.append({"time": t, "type": "unsafe_trajectory", "generation": self.generation})
        traj = self._plan(self.last_decision.waypoint, cloud, t) if self.last_decision else None
        if traj is None:
            self._event(t, Event.RefineInfeasible)
            self._stop(t, cloud)
        else:
            self._swap(traj, "plan", t)

    # -- main loop -----------------------------------------------------------
    def run(self) -> EpisodeLog:
        cfg = self.cfg
        sc = self.sc
        timeout = cfg.timeout_s if cfg.timeout_s is not None else sc.timeout_s
        last_tick = self.last_tick = int(round(timeout * cfg.control_rate))
        policy_period = max(1, int(round(cfg.control_rate / cfg.policy_rate)))
        record_period = max(1, int(round(cfg.control_rate / cfg.record_rate)))
        decider = _WallClockDecider(self) if cfg.wall_clock else _SimDecider(self)
        log_ = self.log
        outcome = "Timeout"
        wall_start = _time.perf_counter()
        k = 0
        try:
            for k in range(last_tick + 1):
                t = k / cfg.control_rate
                if self._tick(k, t, policy_period, record_period, decider) is not None:
                    outcome = self._result
                    break
                if k == last_tick:
                    break
                if cfg.wall_clock:
                    lag = wall_start + (k + 1) / cfg.control_rate - _time.perf_counter()
                    if lag > 0:
                        _time.sleep(lag)
        finally:
            decider.close()
        log_.outcome = outcome
        log_.duration = k / cfg.control_rate
        log_.final_pose = self.state.pose
        log_.timings = dict(self.clock.totals)
        return log_

    def _tick(self, k, t, policy_period, record_period, decider):
        """One control tick; returns an outcome string when the episode ends here."""
        cfg = self.cfg
        sc = self.sc
        log_ = self.log
        self.state = SimState(self.state.pose, self.state.velocity, t)
        hit = check_collision(sc.world, self.state.pose, sc.drone_radius)
        if math.isfinite(hit.clearance):
            log_.min_clearance = min(log_.min_clearance, hit.clearance)
        frame = None
        if k % record_period == 0:
            frame = Frame(len(log_.frames), len(log_.frames) / cfg.record_rate, self.state.pose,
                          self.state.velocity.tolist())
            log_.frames.append(frame)
        if hit.collided:
            return self._finish("Collision")

        policy_tick = k % policy_period == 0
        try:
            arrived = decider.poll(k)
        except ConnectionLost as exc:
            return self._lost(t, exc)
        cloud = depth = None
        if policy_tick or arrived:
            depth, cloud = self._sense(t)
        if frame is not None and cfg.record_depth:
            if depth is None:
                cam_pose = sc.camera.pose_in_world(self.state.pose)
                depth = render_depth(sc.world, sc.camera, cam_pose, t)
            frame.depth = depth.to_millimeters()

        if arrived and self._handle_decision(arrived, cloud, t):
            return self._finish("Success")
        if policy_tick:
            self._reverify(cloud, t)
            if not decider.busy:
                obs = Observation(self.state.pose, depth, sc.instruction, t, 0)
                try:
                    decider.submit(obs, k)
                    arrived = decider.poll(k)
                except ConnectionLost as exc:
                    return self._lost(t, exc)
                if arrived and self._handle_decision(arrived, cloud, t):
                    return self._finish("Success")

        if (self.traj_kind == "plan" and not self.exhausted and self.exec_state is ExecState.NAVIGATING
                and t > self.traj.end_time):
            self.exhausted = True
            self._event(t, Event.TrajectoryExhausted)

        started = _time.perf_counter()
        cmd = sample_command(self.traj, t, self.desired_yaw, self.cmd_yaw, self.limits.yaw_rate_max, self.dt)
        self.cmd_yaw = cmd.yaw
        self.cmd_accel = cmd.acceleration
        record = CommandRecord(k, t, cmd.position.tolist(), cmd.velocity.tolist(), cmd.acceleration.tolist(),
                               cmd.yaw, self.generation)
        log_.commands.append(record)
        if frame is not None:
            frame.command = record
        if k < self.last_tick:
            self.state = step_plant(self.state, cmd, self.dt, self.limits.yaw_rate_max, sc.tau, sc.kp,
                                    speed_cap=1.25 * self.limits.v_max)
        self.clock.add("control", started)
        return None

    def _finish(self, outcome):
        self._result = outcome
        return outcome

    def _lost(self, t, exc):
        self.log.events.append({"time": t, "type": "policy_lost", "detail": str(exc)})
        return self._finish("PolicyLost")


class _SimDecider:
    """Policy answers land a fixed number of ticks after the query (simulated time)."""

    def __init__(self, episode: _Episode):
        self.ep = episode
        self.delay = episode.cfg.ticks(episode.cfg.latency.latency)
        self.pending = None  # (arrival tick, decision)

    @property
    def busy(self):
        return self.pending is not None

    def submit(self, obs, k):
        started = _time.perf_counter()
        try:
            decision = self.ep.policy.decide(obs)
        finally:
            self.ep.clock.add("policy", started)
        if decision:
            self.pending = (k + self.delay, decision)

    def poll(self, k):
        if self.pending is not None and self.pending[0] <= k:
            decision = self.pending[1]
            self.pending = None
            return decision
        return None

    def close(self):
        pass


class _WallClockDecider:
    """Policy runs on a worker thread; its answer is used on the first tick after it is ready.

    The modeled latency is added on the worker after the policy returns.
    """

    def __init__(self, episode: _Episode):
        self.ep = episode
        self.pool = ThreadPoolExecutor(max_workers=1)
        self.future = None

    @property
    def busy(self):
        return self.future is not None

    def _call(self, obs):
        started = _time.perf_counter()
        decision = self.ep.policy.decide(obs)
        self.ep.clock.add("policy", started)
        _time.sleep(self.ep.cfg.latency.latency)
        return decision

    def submit(self, obs, k):
        self.future = self.pool.submit(self._call, obs)

    def poll(self, k):
        if self.future is None or not self.future.done():
            return None
        future, self.future = self.future, None
        decision = future.result()
        return decision or None

    def close(self):
        self.pool.shutdown(wait=False, cancel_futures=True)


def run_episode(scenario, policy, config: ExecutorConfig | None = None) -> EpisodeLog:
    """Fly one episode on the simulated clock and return its log."""
    return _Episode(scenario, policy, config or ExecutorConfig()).run()
