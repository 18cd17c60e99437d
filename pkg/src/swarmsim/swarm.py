"""Multi-agent mission harness: agents, the pose-broadcast bus and mission logging."""
from __future__ import annotations

import logging
import math
import struct
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import explore as ex
from .errors import (BandwidthViolation, ConfigError, DegenerateConfigurationError,
                     NoCorrespondenceError, SyncFailure)
from .icp import (IcpParams, PointSet, RigidTransform2D, chain_transforms, extract_landmarks,
                  icp_with_stats)
from .slam import ScanMatchParams, SlamMap, SlamParams, fuse_pose, match_points, update_map
from .world import (DEFAULT_BEAM_ANGLES, CameraParams, EnvironmentMap, Pose2D, SaturationLimits,
                    camera_fov, point_in_fov, raycast, saturate)

log = logging.getLogger(__name__)

# SLAM map size in bytes; nothing this large may cross the radio
MAP_BYTES = 100 * 100


# ---------------------------------------------------------------- messages

_POSE = struct.Struct("<BHBfff")
_TRANSFORM = struct.Struct("<BHHHfff")
_LANDMARK_HEAD = struct.Struct("<BHH")
TAG_POSE, TAG_TRANSFORM, TAG_LANDMARKS = 1, 2, 3


@dataclass(frozen=True)
class PoseMessage:
    sender: int
    pose: Pose2D
    k: int

    def encode(self) -> bytes:
        return _POSE.pack(TAG_POSE, self.sender, self.k, self.pose.x, self.pose.y, self.pose.theta)

    @classmethod
    def decode(cls, raw: bytes) -> "PoseMessage":
        _, sender, k, x, y, th = _POSE.unpack(raw)
        return cls(sender, Pose2D(x, y, th), k)


@dataclass(frozen=True)
class TransformMessage:
    """ICP result for one neighbour edge: map frame of ``source`` into that of ``target``."""

    sender: int
    source: int
    target: int
    transform: RigidTransform2D

    def encode(self) -> bytes:
        T = self.transform
        return _TRANSFORM.pack(TAG_TRANSFORM, self.sender, self.source, self.target, T.theta, *T.t)

    @classmethod
    def decode(cls, raw: bytes) -> "TransformMessage":
        _, sender, s, t, th, tx, ty = _TRANSFORM.unpack(raw)
        return cls(sender, s, t, RigidTransform2D(th, (tx, ty)))


@dataclass(frozen=True)
class LandmarkMessage:
    sender: int
    points: np.ndarray

    def encode(self) -> bytes:
        pts = np.asarray(self.points, dtype="<f4").reshape(-1, 2)
        return _LANDMARK_HEAD.pack(TAG_LANDMARKS, self.sender, len(pts)) + pts.tobytes()

    @classmethod
    def decode(cls, raw: bytes) -> "LandmarkMessage":
        _, sender, n = _LANDMARK_HEAD.unpack_from(raw)
        pts = np.frombuffer(raw, dtype="<f4", count=2 * n, offset=_LANDMARK_HEAD.size)
        return cls(sender, pts.reshape(-1, 2).astype(float))


def decode_message(raw: bytes):
    tag = raw[0]
    if tag == TAG_POSE:
        return PoseMessage.decode(raw)
    if tag == TAG_TRANSFORM:
        return TransformMessage.decode(raw)
    if tag == TAG_LANDMARKS:
        return LandmarkMessage.decode(raw)
    raise ValueError(f"unknown message tag {tag}")


class PoseBus:
    """Byte-budgeted broadcast channel.

    Payloads are raw bytes; each sender may push at most ``byte_budget`` bytes
    per step. ``neighbors`` maps an agent id to the ids that hear it (default:
    everyone else).
    """

    def __init__(self, agent_ids, byte_budget: int = 1024, neighbors=None):
        if byte_budget >= MAP_BYTES:
            raise ConfigError(f"byte budget {byte_budget} must stay below the map size {MAP_BYTES}")
        self.ids = list(agent_ids)
        self.byte_budget = int(byte_budget)
        self.neighbors = neighbors or {i: [j for j in self.ids if j != i] for i in self.ids}
        self._sent = {i: 0 for i in self.ids}
        self._queue: list[tuple[int, list[int], bytes]] = []
        self.total_bytes = 0

    def new_step(self):
        self._sent = {i: 0 for i in self.ids}

    def send(self, sender: int, payload: bytes, to=None):
        used = self._sent[sender] + len(payload)
        if used > self.byte_budget:
            raise BandwidthViolation(
                f"agent {sender} would send {used} bytes this step (budget {self.byte_budget})")
        self._sent[sender] = used
        self.total_bytes += len(payload)
        recipients = list(self.neighbors[sender]) if to is None else list(to)
        self._queue.append((sender, recipients, bytes(payload)))

    def deliver(self) -> dict[int, list]:
        inbox = {i: [] for i in self.ids}
        for sender, recipients, payload in self._queue:
            for r in recipients:
                inbox[r].append(decode_message(payload))
        self._queue.clear()
        return inbox


# ---------------------------------------------------------------- config

@dataclass
class SimConfig:
    n_agents: int = 3
    initial_poses: list = field(default_factory=list)
    seed: int = 0
    dt: float = 0.05
    duration: float = 180.0
    sync_duration: float = 5.0
    sync_yaw_rate: float = math.radians(30.0)
    # sensing
    beam_angles: tuple = DEFAULT_BEAM_ANGLES
    max_range: float = 4.0
    range_noise: float = 0.01
    odom_sigma_v: float = 0.02
    odom_sigma_w: float = 0.01
    # slam
    slam: SlamParams = SlamParams()
    scan: ScanMatchParams = ScanMatchParams(iterations=200)
    scan_matching: bool = True
    slam_period: float = 0.2
    # seconds of odometry-stitched scans matched together
    match_window: float = 2.0
    fusion_beta: float = 0.8
    # relative localisation
    icp: IcpParams = IcpParams()
    occupied_threshold: int = 64
    landmark_spacing: float = 0.4
    resync_period: float = 10.0
    transform_source: str = "icp"
    # exploration
    explore: ex.ExploreParams = ex.ExploreParams()
    gains: ex.ControlGains = ex.ControlGains(k_c=0.3, k_s=2.0, k_t=2.0, k_theta=1.0)
    camera: CameraParams = CameraParams()
    limits: SaturationLimits = SaturationLimits()
    target_timeout: float = 30.0
    exclude_occupied: bool = True
    known_free_targets: bool = True
    free_threshold: int = 192
    coverage_cells: int = 100
    coverage_resolution: float = 0.1
    # avoidance
    avoidance: bool = True
    d_safe_agents: float = 0.5
    d_safe_obstacles: float = 0.3
    k_rep: float = 0.05
    # radio
    byte_budget: int = 1024
    neighbors: str = "all"
    # logging
    log_period: float = 0.5
    map_export_period: float = 30.0

    def validate(self):
        if self.n_agents < 1:
            raise ConfigError("n_agents must be >= 1")
        if len(self.initial_poses) != self.n_agents:
            raise ConfigError(f"{self.n_agents} agents but {len(self.initial_poses)} initial poses")
        if not self.dt > 0:
            raise ConfigError("dt must be positive")
        limit = ex.MAX_TIME_INDEX * self.explore.delta_t
        if self.duration > limit + 1e-9:
            raise ConfigError(f"duration {self.duration} s exceeds the mission-time limit "
                              f"255 * delta_t = {limit} s of the 8-bit coverage timestamps")
        if not 0 <= self.sync_duration < self.duration:
            raise ConfigError("sync_duration must lie in [0, duration)")
        if self.transform_source not in ("icp", "ground_truth"):
            raise ConfigError("transform_source must be 'icp' or 'ground_truth'")
        if self.neighbors not in ("all", "chain"):
            raise ConfigError("neighbors must be 'all' or 'chain'")
        if not 0.0 <= self.fusion_beta <= 1.0:
            raise ConfigError("fusion_beta must lie in [0, 1]")
        if self.byte_budget >= MAP_BYTES:
            raise ConfigError(f"byte_budget must be below the SLAM map size ({MAP_BYTES} bytes)")
        for p in self.initial_poses:
            if not isinstance(p, Pose2D):
                raise ConfigError("initial poses must be Pose2D")
        return self


# ---------------------------------------------------------------- agents

@dataclass
class AgentState:
    id: int
    pose: Pose2D                 # ground truth, world frame
    frame: Pose2D                # world pose of this agent's map origin (evaluation only)
    estimated_pose: Pose2D       # own map frame
    slam: SlamMap
    coverage: ex.CoverageMap
    rng: np.random.Generator
    target: ex.TargetState | None = None
    target_time: float = 0.0
    landmarks: PointSet = field(default_factory=lambda: PointSet(np.empty((0, 2))))
    neighbor_transforms: dict = field(default_factory=dict)
    neighbor_poses: dict = field(default_factory=dict)
    slam_updates: int = 0
    scan = None
    # (estimated pose, sensor-frame hit points) of recent scans
    history: deque = field(default_factory=deque)

    def camera_center(self, r_c: float) -> np.ndarray:
        p = self.estimated_pose
        return np.array([p.x + r_c * math.cos(p.theta), p.y + r_c * math.sin(p.theta)])

    def estimate_in_world(self) -> Pose2D:
        return self.frame.compose(self.estimated_pose)


def broadcast_and_collect(agents, bus: PoseBus, k: int = 0) -> dict[int, list[PoseMessage]]:
    """Every agent broadcasts its estimated pose; returns each agent's inbox."""
    for a in agents:
        bus.send(a.id, PoseMessage(a.id, a.estimated_pose, k).encode())
    inbox = bus.deliver()
    return {i: [m for m in msgs if isinstance(m, PoseMessage)] for i, msgs in inbox.items()}


def coverage_percentage(cov) -> float:
    cells = cov.cells if hasattr(cov, "cells") else np.asarray(cov)
    return 100.0 * np.count_nonzero(cells) / cells.size


def neighbor_chain_transforms(agent_id: int, edges: dict, ids) -> dict:
    """Frame transforms j -> agent_id for every other j, chained along the id line.

    ``edges[(i, i+1)]`` maps agent i's map coordinates into agent i+1's.
    """
    out = {}
    for j in ids:
        if j == agent_id:
            continue
        if j < agent_id:
            chain = [edges[(m, m + 1)] for m in range(j, agent_id)]
        else:
            chain = [edges[(m - 1, m)].inverse() for m in range(j, agent_id, -1)]
        out[j] = chain_transforms(chain)
    return out


def ground_truth_edges(agents) -> dict:
    edges = {}
    for a, b in zip(agents, agents[1:]):
        T = RigidTransform2D.from_pose(b.frame).inverse().compose(RigidTransform2D.from_pose(a.frame))
        edges[(a.id, b.id)] = T
    return edges


# ---------------------------------------------------------------- log

@dataclass
class MissionLog:
    config: SimConfig
    agent_ids: list
    frames: dict
    # per agent: rows of (time_s, x, y, theta, est_x, est_y, est_theta); est in world frame
    trajectories: dict
    # rows of (time_s, agent_id, coverage_pct)
    coverage: list
    # (step, agent_id, slam cells, coverage cells)
    snapshots: list
    final_slam: dict
    final_coverage: dict
    landmarks: dict
    edges: dict
    edge_residuals: dict
    events: list
    exploration_start: float
    targets: dict

    def coverage_series(self, agent_id):
        rows = [(t, c) for t, i, c in self.coverage if i == agent_id]
        return np.array(rows).reshape(-1, 2)


# ---------------------------------------------------------------- mission

class Mission:
    """Stepper for one run. Stages run for all agents before the next begins."""

    def __init__(self, config: SimConfig, env: EnvironmentMap, step_hook=None):
        self.cfg = config.validate()
        self.env = env
        self.step_hook = step_hook
        cfg = self.cfg
        self.agents = []
        for n, start in enumerate(cfg.initial_poses, start=1):
            if not env.is_free(start.x, start.y):
                raise ConfigError(f"initial pose of agent {n} is not in free space")
            rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, n]))
            cov = ex.CoverageMap.empty(cfg.coverage_cells, cfg.coverage_cells, cfg.coverage_resolution)
            self.agents.append(AgentState(n, start, start, Pose2D(0, 0, 0), SlamMap(), cov, rng))
        for a in self.agents:
            for b in self.agents:
                if a.id < b.id and math.hypot(a.pose.x - b.pose.x, a.pose.y - b.pose.y) == 0.0:
                    raise ConfigError(f"agents {a.id} and {b.id} start at the same position")
        ids = [a.id for a in self.agents]
        if cfg.neighbors == "chain":
            nb = {i: [j for j in ids if abs(j - i) == 1] for i in ids}
        else:
            nb = None
        self.bus = PoseBus(ids, cfg.byte_budget, nb)
        self.edges = {}
        self.edge_residuals = {}
        self.events = []
        self.trajectories = {i: [] for i in ids}
        self.coverage_rows = []
        self.snapshots = []
        self.targets = {i: [] for i in ids}
        self.steps = int(round(cfg.duration / cfg.dt))
        self.sync_steps = int(round(cfg.sync_duration / cfg.dt))
        self.slam_every = max(1, int(round(cfg.slam_period / cfg.dt)))
        self.log_every = max(1, int(round(cfg.log_period / cfg.dt)))
        self.snap_every = max(1, int(round(cfg.map_export_period / cfg.dt)))
        self.resync_every = max(1, int(round(cfg.resync_period / cfg.dt)))
        self.window = max(1, int(round(cfg.match_window / cfg.dt)))

    # -- stages

    def sense(self):
        cfg = self.cfg
        for a in self.agents:
            a.scan = raycast(self.env, a.pose, cfg.beam_angles, cfg.max_range, cfg.range_noise, a.rng)
            a.history.append((a.estimated_pose, a.scan.body_points()))
            while len(a.history) > self.window:
                a.history.popleft()

    def stitched_points(self, a: AgentState) -> np.ndarray:
        """Recent hit points carried into the current estimated body frame by odometry."""
        inv = RigidTransform2D.from_pose(a.estimated_pose).inverse()
        parts = [inv.compose(RigidTransform2D.from_pose(p)).apply(b) for p, b in a.history if len(b)]
        return np.concatenate(parts) if parts else np.empty((0, 2))

    def localize(self):
        cfg = self.cfg
        for a in self.agents:
            pts = self.stitched_points(a)
            if cfg.scan_matching and a.slam_updates > 0 and len(pts) >= 2:
                matched, cost = match_points(a.slam, pts, a.estimated_pose, cfg.scan, a.rng)
                if cost / len(pts) <= cfg.slam.quality_threshold:
                    fused = fuse_pose(a.estimated_pose, matched, cfg.fusion_beta)
                    # keep the stitched history rigidly attached to the corrected pose
                    corr = RigidTransform2D.from_pose(fused).compose(
                        RigidTransform2D.from_pose(a.estimated_pose).inverse())
                    a.history = deque((corr.apply_pose(p), b) for p, b in a.history)
                    a.estimated_pose = fused
            update_map(a.slam, a.estimated_pose, a.scan, cfg.slam)
            a.slam_updates += 1

    def synchronize(self, t: float, initial: bool):
        """Landmark exchange and ICP along the neighbour chain."""
        cfg = self.cfg
        for a in self.agents:
            a.landmarks = extract_landmarks(a.slam, cfg.occupied_threshold, cfg.landmark_spacing, a.id)
        if cfg.transform_source == "ground_truth":
            edges = ground_truth_edges(self.agents)
            self.edges = edges
        else:
            # each agent sends its landmarks to its predecessor, which runs ICP
            for a in self.agents[1:]:
                self.bus.send(a.id, LandmarkMessage(a.id, a.landmarks.points).encode(), to=[a.id - 1])
            inbox = self.bus.deliver()
            for a in self.agents[:-1]:
                msgs = [m for m in inbox[a.id] if isinstance(m, LandmarkMessage) and m.sender == a.id + 1]
                target = msgs[-1].points
                edge = (a.id, a.id + 1)
                init = self.edges.get(edge, RigidTransform2D())
                try:
                    if len(a.landmarks) < 3 or len(target) < 3:
                        raise NoCorrespondenceError("fewer than three landmarks")
                    res = icp_with_stats(a.landmarks, target, init, cfg.icp)
                except (NoCorrespondenceError, DegenerateConfigurationError) as exc:
                    if initial:
                        raise SyncFailure(f"ICP between agents {edge[0]} and {edge[1]} failed: {exc}") from exc
                    self.events.append((t, "resync_failed", edge, str(exc)))
                    continue
                self.edge_residuals[edge] = res.residual
                self.events.append((t, "sync" if initial else "resync", edge,
                                    f"iterations={res.iterations} residual={res.residual:.4f}"))
                self.bus.send(a.id, TransformMessage(a.id, edge[0], edge[1], res.transform).encode())
            for msgs in self.bus.deliver().values():
                for m in msgs:
                    if isinstance(m, TransformMessage):
                        self.edges[(m.source, m.target)] = m.transform
        ids = [a.id for a in self.agents]
        for a in self.agents:
            a.neighbor_transforms = neighbor_chain_transforms(a.id, self.edges, ids)

    def communicate(self, k: int):
        inbox = broadcast_and_collect(self.agents, self.bus, k)
        for a in self.agents:
            a.neighbor_poses = {}
            for m in inbox[a.id]:
                T = a.neighbor_transforms.get(m.sender)
                if T is not None:
                    a.neighbor_poses[m.sender] = T.apply_pose(m.pose)

    def target_mask(self, a: AgentState):
        cfg = self.cfg
        if a.coverage.shape != a.slam.shape or a.coverage.resolution != a.slam.resolution:
            return None
        mask = np.ones(a.coverage.shape, dtype=bool)
        if cfg.exclude_occupied:
            mask &= a.slam.cells > cfg.occupied_threshold
        if cfg.known_free_targets:
            mask &= a.slam.cells >= cfg.free_threshold
        return mask

    def plan(self, t: float, k: int):
        cfg = self.cfg
        for a in self.agents:
            fovs = [camera_fov(a.estimated_pose, cfg.camera)]
            fovs += [camera_fov(p, cfg.camera) for _, p in sorted(a.neighbor_poses.items())]
            ex.stamp_coverage(a.coverage, fovs, k)
            x_c = fovs[0].center
            stale = a.target is None or t - a.target_time >= cfg.target_timeout
            if stale or point_in_fov(fovs[0], a.target.current):
                prev = x_c if a.target is None else a.target.current
                ts = ex.TargetState(prev, prev)
                new = ex.select_target(a.coverage, t, x_c, ts, cfg.explore, self.target_mask(a))
                a.target = ex.TargetState(new, prev)
                a.target_time = t
                self.targets[a.id].append((t, float(new[0]), float(new[1])))

    def control(self, a: AgentState, exploring: bool):
        cfg = self.cfg
        p = a.estimated_pose
        if exploring:
            e_c = ex.camera_error(a.target.current, (p.x, p.y), p.theta, cfg.camera.r_c)
            theta_d = ex.desired_heading(e_c)
            e_th = ex.heading_error(theta_d, p.theta)
            a.target.theta_d = p.theta if theta_d is None else theta_d
            err = ex.ErrorState(e_c, e_th)
            u = ex.position_control(err, cfg.gains)
            w = ex.heading_control(err.e_theta, cfg.gains.k_theta)
        else:
            u = np.zeros(2)
            w = cfg.sync_yaw_rate
        if cfg.avoidance:
            others = [q.xy for _, q in sorted(a.neighbor_poses.items())]
            u = u + ex.avoidance_velocity(p.xy, others, None, cfg.d_safe_agents, cfg.k_rep, rng=a.rng)
            u = u + ex.avoidance_velocity(p.xy, None, a.scan, cfg.d_safe_obstacles, cfg.k_rep,
                                          heading=p.theta, rng=a.rng)
        return u, w

    def act(self, exploring: bool):
        cfg = self.cfg
        dt = cfg.dt
        for a in self.agents:
            u, w = self.control(a, exploring)
            u, w = saturate(u, w, cfg.limits)
            # command is expressed in the agent's map frame
            c, s = math.cos(a.frame.theta), math.sin(a.frame.theta)
            uw = (c * u[0] - s * u[1], s * u[0] + c * u[1])
            nx, ny = a.pose.x + dt * uw[0], a.pose.y + dt * uw[1]
            if not self.env.is_free(nx, ny):
                nx, ny = a.pose.x, a.pose.y
            moved = ((nx - a.pose.x) / dt, (ny - a.pose.y) / dt)
            a.pose = Pose2D(nx, ny, a.pose.theta + dt * w)
            # odometry measures the realised motion, in the map frame, with noise
            mv = (c * moved[0] + s * moved[1], -s * moved[0] + c * moved[1])
            nv = a.rng.normal(0.0, 1.0, 3) if (cfg.odom_sigma_v > 0 or cfg.odom_sigma_w > 0) else np.zeros(3)
            e = a.estimated_pose
            a.estimated_pose = Pose2D(e.x + dt * (mv[0] + cfg.odom_sigma_v * nv[0]),
                                      e.y + dt * (mv[1] + cfg.odom_sigma_v * nv[1]),
                                      e.theta + dt * (w + cfg.odom_sigma_w * nv[2]))

    def record(self, step: int, t: float, exploring: bool):
        for a in self.agents:
            e = a.estimate_in_world()
            self.trajectories[a.id].append((t, a.pose.x, a.pose.y, a.pose.theta, e.x, e.y, e.theta))
            if exploring:
                self.coverage_rows.append((t, a.id, coverage_percentage(a.coverage)))

    # -- driver

    def run(self) -> MissionLog:
        cfg = self.cfg
        for step in range(self.steps + 1):
            t = step * cfg.dt
            exploring = step >= self.sync_steps
            self.bus.new_step()
            self.sense()
            if step % self.slam_every == 0:
                self.localize()
            if step == self.sync_steps:
                self.synchronize(t, initial=True)
            elif exploring and (step - self.sync_steps) % self.resync_every == 0:
                self.synchronize(t, initial=False)
            k = ex.time_index(t, cfg.explore.delta_t)
            self.communicate(k)
            if exploring:
                self.plan(t, k)
            if step % self.log_every == 0:
                self.record(step, t, exploring)
            if step % self.snap_every == 0 or step == self.steps:
                for a in self.agents:
                    self.snapshots.append((step, a.id, a.slam.cells.copy(), a.coverage.cells.copy()))
            if self.step_hook is not None:
                self.step_hook(self, step, t)
            if step == self.steps:
                break
            self.act(exploring)
        return MissionLog(
            config=cfg,
            agent_ids=[a.id for a in self.agents],
            frames={a.id: a.frame for a in self.agents},
            trajectories=self.trajectories,
            coverage=self.coverage_rows,
            snapshots=self.snapshots,
            final_slam={a.id: a.slam.copy() for a in self.agents},
            final_coverage={a.id: a.coverage.copy() for a in self.agents},
            landmarks={a.id: a.landmarks for a in self.agents},
            edges=dict(self.edges),
            edge_residuals=dict(self.edge_residuals),
            events=list(self.events),
            exploration_start=self.sync_steps * cfg.dt,
            targets=self.targets,
        )


def run_mission(config: SimConfig, env: EnvironmentMap, step_hook=None) -> MissionLog:
    return Mission(config, env, step_hook).run()
