"""Procedural 2D driving world: grid road network, routes, agents, dynamics.

Road networks are grid-shaped: intersections at grid nodes, straight two-way
roads between them, quarter-circle connectors for turns. Driving happens on
the right-hand lane (offset from the road axis). Routes are random walks over
the directed lane graph; other agents are scripted followers on closed block
loops or back-and-forth patrols restricted to edges that do not touch any
route node, which keeps expert rollouts collision-free by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .geometry import OrientedRect, Path, arc_points, segment_points, wrap_angle

Node = Tuple[int, int]
DirectedEdge = Tuple[Node, Node]


class WorldError(Exception):
    pass


class InfeasibleWorldError(WorldError):
    """World config cannot produce a drivable map or route."""


@dataclass(frozen=True)
class WorldConfig:
    grid_nx: int = 4
    grid_ny: int = 3
    block_size_range: Tuple[float, float] = (48.0, 68.0)
    road_halfwidth: float = 3.5
    lane_offset: float = 1.75  # right-hand lane center from the road axis
    setback: float = 6.0  # where lanes stop short of an intersection center
    edge_keep_prob: float = 0.7
    route_intersections: Tuple[int, int] = (2, 4)
    num_agents: int = 3
    agent_speed_range: Tuple[float, float] = (2.0, 4.5)
    sample_step: float = 1.0  # polyline sampling (m); arcs use half of this

    def __post_init__(self):
        if self.grid_nx < 2 or self.grid_ny < 2:
            raise InfeasibleWorldError("grid must be at least 2x2")
        if self.lane_offset >= self.setback:
            raise InfeasibleWorldError("lane_offset must be smaller than setback")


@dataclass(frozen=True)
class VehicleParams:
    wheelbase: float = 2.7
    max_steer_deg: float = 35.0
    max_accel: float = 3.0  # m/s^2 at full throttle
    max_brake: float = 6.0  # m/s^2 at full brake
    drag: float = 0.05  # 1/s, linear coast-down
    half_length: float = 2.25
    half_width: float = 0.9


@dataclass
class Appearance:
    """Scene lighting and palette; the day/night/rain proxy knobs."""

    name: str = "day"
    brightness: float = 1.0
    sky_top: Tuple[float, float, float] = (0.45, 0.65, 0.95)
    sky_bottom: Tuple[float, float, float] = (0.72, 0.82, 0.95)
    grass: Tuple[float, float, float] = (0.33, 0.48, 0.25)
    road: Tuple[float, float, float] = (0.32, 0.32, 0.34)
    marking: Tuple[float, float, float] = (0.85, 0.85, 0.80)
    fog_start: float = 45.0
    fog_end: float = 90.0

    @classmethod
    def day(cls) -> "Appearance":
        return cls()

    @classmethod
    def dusk(cls) -> "Appearance":
        return cls(
            name="dusk",
            brightness=0.7,
            sky_top=(0.35, 0.30, 0.50),
            sky_bottom=(0.85, 0.55, 0.35),
        )

    @classmethod
    def night(cls) -> "Appearance":
        return cls(
            name="night",
            brightness=0.32,
            sky_top=(0.05, 0.06, 0.12),
            sky_bottom=(0.10, 0.10, 0.18),
            grass=(0.20, 0.26, 0.18),
            marking=(0.95, 0.95, 0.88),
        )

    @classmethod
    def rain(cls) -> "Appearance":
        return cls(
            name="rain",
            brightness=0.62,
            sky_top=(0.55, 0.58, 0.62),
            sky_bottom=(0.65, 0.67, 0.70),
            grass=(0.28, 0.38, 0.24),
            road=(0.24, 0.25, 0.28),
            fog_start=25.0,
            fog_end=55.0,
        )

    @classmethod
    def preset(cls, name: str) -> "Appearance":
        presets = {"day": cls.day, "dusk": cls.dusk, "night": cls.night, "rain": cls.rain}
        if name not in presets:
            raise ValueError(f"unknown appearance preset {name!r}")
        return presets[name]()

    @classmethod
    def randomized(cls, rng: np.random.Generator) -> "Appearance":
        base = cls.preset(rng.choice(["day", "dusk", "night", "rain"]))
        jitter = lambda c, s: tuple(
            float(np.clip(v + rng.uniform(-s, s), 0.0, 1.0)) for v in c
        )
        return replace(
            base,
            brightness=float(np.clip(base.brightness * rng.uniform(0.85, 1.15), 0.15, 1.25)),
            sky_top=jitter(base.sky_top, 0.06),
            sky_bottom=jitter(base.sky_bottom, 0.06),
            grass=jitter(base.grass, 0.05),
            road=jitter(base.road, 0.03),
        )


class RoadNetwork:
    """Grid road graph with lane/connector geometry helpers."""

    def __init__(self, node_pos: Dict[Node, np.ndarray], edges: set, config: WorldConfig):
        self.node_pos = node_pos
        self.edges = edges  # set of frozenset({a, b})
        self.config = config

    def has_edge(self, a: Node, b: Node) -> bool:
        return frozenset((a, b)) in self.edges

    def neighbors(self, n: Node) -> List[Node]:
        i, j = n
        cand = [(i + 1, j), (i - 1, j), (i, j + 1), (i, j - 1)]
        return [m for m in cand if m in self.node_pos and self.has_edge(n, m)]

    def edge_vectors(self, a: Node, b: Node):
        pa, pb = self.node_pos[a], self.node_pos[b]
        d = pb - pa
        length = float(np.linalg.norm(d))
        u = d / length
        right = np.array([u[1], -u[0]])
        return pa, pb, u, right, length

    def lane_points(self, a: Node, b: Node) -> np.ndarray:
        """Right-hand lane centerline for travel a -> b, trimmed at setbacks."""
        cfg = self.config
        pa, pb, u, right, length = self.edge_vectors(a, b)
        start = pa + u * cfg.setback + right * cfg.lane_offset
        end = pb - u * cfg.setback + right * cfg.lane_offset
        return segment_points(start, end, cfg.sample_step)

    def turn_direction(self, a: Node, n: Node, b: Node) -> int:
        """+1 left turn, 0 straight, -1 right turn for the maneuver a->n->b."""
        _, _, u_in, _, _ = self.edge_vectors(a, n)
        _, _, u_out, _, _ = self.edge_vectors(n, b)
        cross = u_in[0] * u_out[1] - u_in[1] * u_out[0]
        if abs(cross) < 1e-9:
            return 0
        return 1 if cross > 0 else -1

    def connector_points(self, a: Node, n: Node, b: Node) -> np.ndarray:
        """Lane connector through intersection ``n`` from edge a->n to n->b."""
        cfg = self.config
        pn = self.node_pos[n]
        _, _, u_in, right_in, _ = self.edge_vectors(a, n)
        _, _, u_out, right_out, _ = self.edge_vectors(n, b)
        p_in = pn - u_in * cfg.setback + right_in * cfg.lane_offset
        p_out = pn + u_out * cfg.setback + right_out * cfg.lane_offset
        turn = self.turn_direction(a, n, b)
        if turn == 0:
            return segment_points(p_in, p_out, cfg.sample_step)
        if turn < 0:  # right turn, small radius
            radius = cfg.setback - cfg.lane_offset
            center = pn - u_in * cfg.setback + right_in * cfg.setback
        else:  # left turn, large radius across the intersection
            radius = cfg.setback + cfg.lane_offset
            center = p_in - right_in * radius
        a0 = math.atan2(p_in[1] - center[1], p_in[0] - center[0])
        sweep = math.pi / 2 if turn > 0 else -math.pi / 2
        return arc_points(center, radius, a0, a0 + sweep, cfg.sample_step / 2)

    def successors(self, edge: DirectedEdge) -> List[DirectedEdge]:
        a, n = edge
        return [(n, b) for b in self.neighbors(n) if b != a]


@dataclass
class RouteInfo:
    edges: List[DirectedEdge]
    path: Path
    nodes: List[Node]

    @property
    def num_intersections(self) -> int:
        return len(self.edges) - 1


@dataclass
class Agent:
    """Scripted lane follower with a closed-form pose schedule."""

    path: Path
    speed: float
    s0: float
    mode: str  # "loop" | "patrol"
    half_length: float = 2.2
    half_width: float = 0.85
    color_seed: int = 0
    pause: float = 2.0  # patrol end pause, seconds

    def arc_position(self, t: float) -> Tuple[float, int]:
        """Arc length and direction sign (+1 fwd / -1 reverse) at time t."""
        if self.mode == "loop":
            return (self.s0 + self.speed * t) % self.path.length, 1
        span = self.path.length
        travel = span / self.speed
        period = 2 * (travel + self.pause)
        t = (t + self.s0 / self.speed) % period
        if t < travel:
            return self.speed * t, 1
        t -= travel
        if t < self.pause:
            return span, 1
        t -= self.pause
        if t < travel:
            return span - self.speed * t, -1
        return 0.0, -1

    def pose_at(self, t: float) -> Tuple[float, float, float]:
        s, sign = self.arc_position(t)
        p = self.path.point_at(s)
        heading = float(self.path.heading_at(s))
        if sign < 0:
            heading = float(wrap_angle(heading + math.pi))
        return float(p[0]), float(p[1]), heading

    def footprint_at(self, t: float) -> OrientedRect:
        x, y, heading = self.pose_at(t)
        return OrientedRect(x, y, heading, self.half_length, self.half_width)


@dataclass
class EgoState:
    x: float
    y: float
    heading: float
    speed: float

    def footprint(self, params: VehicleParams) -> OrientedRect:
        return OrientedRect(
            self.x, self.y, self.heading, params.half_length, params.half_width
        )


@dataclass
class WorldState:
    config: WorldConfig
    vehicle: VehicleParams
    network: RoadNetwork
    route: RouteInfo
    agents: List[Agent]
    ego: EgoState
    appearance: Appearance
    time: float = 0.0
    seed: int = 0

    def agent_footprints(self, t: Optional[float] = None) -> List[OrientedRect]:
        t = self.time if t is None else t
        return [a.footprint_at(t) for a in self.agents]

    def off_drivable_distance(self, x: float, y: float) -> float:
        """Meters beyond the drivable surface; 0 when on a road."""
        cfg = self.config
        best = math.inf
        p = np.array([x, y])
        for e in self.network.edges:
            a, b = tuple(e)
            pa, pb = self.network.node_pos[a], self.network.node_pos[b]
            d = pb - pa
            t = np.clip(np.dot(p - pa, d) / np.dot(d, d), 0.0, 1.0)
            dist = float(np.linalg.norm(p - (pa + t * d))) - cfg.road_halfwidth
            best = min(best, dist)
        for pos in self.network.node_pos.values():
            cheb = max(abs(x - pos[0]), abs(y - pos[1])) - cfg.setback
            best = min(best, cheb)
        return max(best, 0.0)


def _connected(nodes: Sequence[Node], edges: set) -> bool:
    if not nodes:
        return False
    seen = {nodes[0]}
    stack = [nodes[0]]
    adj: Dict[Node, List[Node]] = {n: [] for n in nodes}
    for e in edges:
        a, b = tuple(e)
        adj[a].append(b)
        adj[b].append(a)
    while stack:
        n = stack.pop()
        for m in adj[n]:
            if m not in seen:
                seen.add(m)
                stack.append(m)
    return len(seen) == len(nodes)


def _build_network(rng: np.random.Generator, config: WorldConfig) -> RoadNetwork:
    block = rng.uniform(*config.block_size_range)
    nodes = [(i, j) for i in range(config.grid_nx) for j in range(config.grid_ny)]
    node_pos = {(i, j): np.array([i * block, j * block]) for (i, j) in nodes}
    all_edges = []
    for i, j in nodes:
        if (i + 1, j) in node_pos:
            all_edges.append(frozenset(((i, j), (i + 1, j))))
        if (i, j + 1) in node_pos:
            all_edges.append(frozenset(((i, j), (i, j + 1))))
    # Random spanning tree first, then keep extra edges with edge_keep_prob.
    order = rng.permutation(len(all_edges))
    kept: set = set()
    comp = {n: n for n in nodes}

    def find(n):
        while comp[n] != n:
            comp[n] = comp[comp[n]]
            n = comp[n]
        return n

    extras = []
    for idx in order:
        e = all_edges[idx]
        a, b = tuple(e)
        ra, rb = find(a), find(b)
        if ra != rb:
            comp[ra] = rb
            kept.add(e)
        else:
            extras.append(e)
    for e in extras:
        if rng.random() < config.edge_keep_prob:
            kept.add(e)
    if not _connected(nodes, kept):
        raise InfeasibleWorldError("road graph failed to connect")
    return RoadNetwork(node_pos, kept, config)


def _route_walk(
    rng: np.random.Generator, network: RoadNetwork, target_intersections: int
) -> Optional[List[DirectedEdge]]:
    starts = []
    for e in network.edges:
        a, b = tuple(e)
        starts += [(a, b), (b, a)]
    starts.sort(key=lambda de: (de[0], de[1]))
    start = starts[rng.integers(len(starts))]
    edges = [start]
    visited = {start[0], start[1]}
    while len(edges) - 1 < target_intersections:
        options = [s for s in network.successors(edges[-1]) if s[1] not in visited]
        if not options:
            break
        # Mild bias toward turns so turn commands are well represented.
        weights = []
        a, n = edges[-1]
        for opt in options:
            turn = network.turn_direction(a, n, opt[1])
            weights.append(1.35 if turn != 0 else 1.0)
        w = np.array(weights) / sum(weights)
        nxt = options[rng.choice(len(options), p=w)]
        edges.append(nxt)
        visited.add(nxt[1])
    if len(edges) < 2:
        return None
    return edges


def _route_path(network: RoadNetwork, edges: List[DirectedEdge]) -> Path:
    pieces = [network.lane_points(*edges[0])]
    for prev, nxt in zip(edges, edges[1:]):
        pieces.append(network.connector_points(prev[0], prev[1], nxt[1]))
        pieces.append(network.lane_points(*nxt))
    pts = np.concatenate(pieces, axis=0)
    return Path(pts)


def _block_loops(network: RoadNetwork, banned: set) -> List[List[Node]]:
    loops = []
    for i, j in network.node_pos:
        corners = [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)]
        if any(c not in network.node_pos or c in banned for c in corners):
            continue
        ring = corners + [corners[0]]
        if all(network.has_edge(a, b) for a, b in zip(ring, ring[1:])):
            loops.append(corners)
    return loops


def _loop_path(network: RoadNetwork, corners: List[Node], clockwise: bool) -> Path:
    ring = list(reversed(corners)) if clockwise else list(corners)
    edges = [(ring[k], ring[(k + 1) % 4]) for k in range(4)]
    pieces = []
    for k in range(4):
        a, b = edges[k]
        pieces.append(network.lane_points(a, b))
        nxt = edges[(k + 1) % 4]
        pieces.append(network.connector_points(a, b, nxt[1]))
    pts = np.concatenate(pieces, axis=0)
    pts = np.concatenate([pts, pts[:1]], axis=0)
    return Path(pts, closed=True)


# Patrol agents keep this distance from intersections the route passes
# through; with the connector geometry it guarantees a clearance larger than
# two vehicle half-diagonals even under expert perturbation.
ROUTE_NODE_MARGIN = 16.0
PLAIN_NODE_MARGIN = 8.0


def _patrol_path(
    network: RoadNetwork, a: Node, b: Node, route_nodes: set, config: WorldConfig
) -> Optional[Path]:
    pa, pb, u, right, length = network.edge_vectors(a, b)
    m_a = ROUTE_NODE_MARGIN if a in route_nodes else PLAIN_NODE_MARGIN
    m_b = ROUTE_NODE_MARGIN if b in route_nodes else PLAIN_NODE_MARGIN
    if length - m_a - m_b < 8.0:
        return None
    start = pa + u * m_a + right * config.lane_offset
    end = pb - u * m_b + right * config.lane_offset
    return Path(segment_points(start, end, config.sample_step))


def _spawn_agents(
    rng: np.random.Generator,
    network: RoadNetwork,
    route_nodes: set,
    route_edges: set,
    config: WorldConfig,
) -> List[Agent]:
    agents: List[Agent] = []
    loops = _block_loops(network, route_nodes)
    # Patrol anywhere off the route itself; prefer edges touching the route so
    # other traffic is actually visible and ends up in agent annotations.
    candidates = [
        tuple(sorted(tuple(e)))
        for e in sorted(network.edges, key=lambda e: sorted(tuple(e)))
        if e not in route_edges
    ]
    near_route = [e for e in candidates if set(e) & route_nodes]
    far = [e for e in candidates if not (set(e) & route_nodes)]
    patrol_pool = near_route + far
    for k in range(config.num_agents):
        speed = float(rng.uniform(*config.agent_speed_range))
        use_patrol = bool(patrol_pool) and (not loops or k % 2 == 0)
        if use_patrol:
            a, b = patrol_pool[int(rng.integers(len(patrol_pool)))]
            if rng.random() < 0.5:
                a, b = b, a
            path = _patrol_path(network, a, b, route_nodes, config)
            if path is None:
                continue
            agents.append(
                Agent(
                    path=path,
                    speed=speed,
                    s0=float(rng.uniform(0, path.length)),
                    mode="patrol",
                    color_seed=int(rng.integers(1 << 30)),
                )
            )
        elif loops:
            corners = loops[int(rng.integers(len(loops)))]
            path = _loop_path(network, corners, clockwise=bool(rng.random() < 0.5))
            agents.append(
                Agent(
                    path=path,
                    speed=speed,
                    s0=float(rng.uniform(0, path.length)),
                    mode="loop",
                    color_seed=int(rng.integers(1 << 30)),
                )
            )
    return agents


def build_world(
    seed: int,
    config: WorldConfig = WorldConfig(),
    vehicle: VehicleParams = VehicleParams(),
    appearance: Optional[Appearance] = None,
) -> WorldState:
    """Deterministically build a world (map, route, agents) from a seed."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5E1FD]))
    network = _build_network(rng, config)
    lo, hi = config.route_intersections
    target = int(rng.integers(lo, hi + 1))
    edges: Optional[List[DirectedEdge]] = None
    for _ in range(24):
        walk = _route_walk(rng, network, target)
        if walk is not None and (edges is None or len(walk) > len(edges)):
            edges = walk
        if edges is not None and len(edges) - 1 >= target:
            break
    if edges is None or len(edges) < 2:
        raise InfeasibleWorldError("could not build a route with an intersection")
    path = _route_path(network, edges)
    route = RouteInfo(edges=edges, path=path, nodes=[edges[0][0]] + [e[1] for e in edges])
    route_edge_set = {frozenset(e) for e in edges}
    agents = _spawn_agents(rng, network, set(route.nodes), route_edge_set, config)
    spawn_s = min(2.0, path.length / 10)
    p0 = path.point_at(spawn_s)
    ego = EgoState(
        x=float(p0[0]),
        y=float(p0[1]),
        heading=float(path.heading_at(spawn_s)),
        speed=0.0,
    )
    if appearance is None:
        appearance = Appearance.day()
    return WorldState(
        config=config,
        vehicle=vehicle,
        network=network,
        route=route,
        agents=agents,
        ego=ego,
        appearance=appearance,
        seed=seed,
    )


def step(world: WorldState, action: Tuple[float, float, float], dt: float) -> WorldState:
    """Advance the world by ``dt`` under (steer, throttle, brake).

    Kinematic bicycle for the ego; scripted agents follow their schedules.
    Mutates and returns ``world``. Speed never goes negative.
    """
    if not (0.0 < dt <= 0.1):
        raise ValueError(f"dt must be in (0, 0.1], got {dt}")
    steer, throttle, brake = (float(v) for v in action)
    if not all(math.isfinite(v) for v in (steer, throttle, brake)):
        raise ValueError(f"non-finite action {action}")
    steer = min(max(steer, -1.0), 1.0)
    throttle = min(max(throttle, 0.0), 1.0)
    brake = min(max(brake, 0.0), 1.0)

    p = world.vehicle
    ego = world.ego
    accel = p.max_accel * throttle - p.max_brake * brake - p.drag * ego.speed
    new_speed = max(ego.speed + accel * dt, 0.0)
    v_mid = 0.5 * (ego.speed + new_speed)
    delta = math.radians(p.max_steer_deg) * steer
    yaw_rate = v_mid / p.wheelbase * math.tan(delta)
    # Midpoint heading keeps constant-input trajectories on exact arcs.
    heading_mid = ego.heading + 0.5 * yaw_rate * dt
    ego.x += v_mid * math.cos(heading_mid) * dt
    ego.y += v_mid * math.sin(heading_mid) * dt
    ego.heading = float(wrap_angle(ego.heading + yaw_rate * dt))
    ego.speed = new_speed
    world.time += dt
    return world
