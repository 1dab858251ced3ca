"""Push planning: waypoints, stability-aware goals, contact-point search.

Waypoints come from an RRT* over planar body poses that rejects unstable or
colliding configurations. Each push then greedily optimizes the contact cell:
start from the outer cell best aligned with the line from the target through
the center of mass, hill-climb over envelope neighbors on the simulated
distance-to-waypoint after one push, and optimize the push duration over a
small grid. The exhaustive variant scores every outer cell instead.

Distances between a body configuration and a target pose are RMS cell-center
distances to the rigidly placed target configuration, so rotation error is
expressed in meters.
"""

from dataclasses import dataclass, field

import numpy as np
from shapely.geometry import Point, Polygon
from shapely.prepared import prep

from .body import (BodyState, PushAction, body_pose_of, center_of_mass, place_at,
                   rigidify)
from .dynamics import CallCounter, SolverConfig, simulate, wrap_angle
from .errors import LcpSolveError, PlanningError
from .seeding import stream

STABILITY_MARGIN_FRACTION = 0.1  # of cell width, COM distance inside the table edge


@dataclass(frozen=True)
class GoalSpec:
    """Target body pose with arrival tolerance; region kept for goal sampling."""

    target_pose: np.ndarray  # (x, y, theta)
    tolerance: float
    region: object = None  # optional polygon vertex list

    def __post_init__(self):
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")


@dataclass
class Environment:
    """Support surface boundary and polygonal obstacles."""

    table: list  # [(x, y), ...]
    obstacles: list = field(default_factory=list)

    def __post_init__(self):
        self._table_poly = Polygon(self.table)
        if not self._table_poly.is_valid:
            raise ValueError("table polygon must be simple")
        self._obstacle_polys = [Polygon(o) for o in self.obstacles]
        self._prepared_obstacles = [prep(p) for p in self._obstacle_polys]
        # convex tables get a vectorized half-plane containment test
        self._halfplanes = None
        hull = self._table_poly.convex_hull
        if abs(hull.area - self._table_poly.area) <= 1e-12 * max(hull.area, 1e-300):
            pts = np.asarray(self._table_poly.exterior.coords)[:-1]
            if Polygon(pts).exterior.is_ccw is False:
                pts = pts[::-1]
            edges = np.roll(pts, -1, axis=0) - pts
            normals = np.column_stack([edges[:, 1], -edges[:, 0]])  # outward
            normals /= np.linalg.norm(normals, axis=1, keepdims=True)
            self._halfplanes = (normals, np.sum(normals * pts, axis=1))

    def margin_inside_table(self, xy):
        """Signed clearance of a point from the table boundary (>0 inside)."""
        if self._halfplanes is not None:
            a, b = self._halfplanes
            return float(np.min(b - a @ np.asarray(xy, dtype=float)))
        pt = Point(xy[0], xy[1])
        d = self._table_poly.exterior.distance(pt)
        return d if self._table_poly.contains(pt) else -d

    @property
    def table_polygon(self):
        return self._table_poly

    def bounds(self):
        return self._table_poly.bounds


@dataclass
class PlannerConfig:
    """Knobs for the pushing loop and the waypoint search."""

    solver: SolverConfig = field(default_factory=SolverConfig)
    waypoint_tolerance: float = None  # defaults to one cell width
    force_magnitude: float = None  # defaults to just above the friction bound
    push_steps: int = 2
    duration_steps: tuple = (1, 2, 4)
    patience: int = 12
    min_progress: float = 1e-4
    goal_slack: float = 0.7  # plan to this fraction of the goal tolerance
    rrt_iterations: int = 2000
    rrt_step: float = None  # defaults to two cell widths
    rrt_goal_bias: float = 0.1


@dataclass(frozen=True)
class Plan:
    """Planned pushes with predicted states and solve accounting."""

    actions: tuple
    predicted_states: tuple
    waypoints: tuple
    simulator_calls: int
    push_spans: tuple  # number of consecutive actions per push
    reached_goal: bool = True


def pose_gap(body, pose, se2_target):
    """RMS cell-center distance from a stacked pose to a placed target pose."""
    cur = np.asarray(pose, dtype=float).reshape(-1, 3)[:, 1:]
    tgt = place_at(body, se2_target).reshape(-1, 3)[:, 1:]
    d = cur - tgt
    return float(np.sqrt(np.mean(d[:, 0] ** 2 + d[:, 1] ** 2)))


def _se2_distance(a, b, rot_radius):
    dp = np.hypot(a[0] - b[0], a[1] - b[1])
    dth = abs(float(wrap_angle(a[2] - b[2])))
    return dp + rot_radius * dth


def _rot_radius(body):
    ref = body.reference_centers()
    cen = ref.mean(axis=0)
    return float(np.max(np.hypot(*(ref - cen).T))) + body.cell_width / 2


def _hull(body):
    ref = body.reference_centers()
    cen = ref.mean(axis=0)
    half = body.cell_width / 2
    corners = []
    for cx, cy in ref - cen:
        corners.extend(
            [
                (cx - half, cy - half),
                (cx + half, cy - half),
                (cx + half, cy + half),
                (cx - half, cy + half),
            ]
        )
    from shapely.geometry import MultiPoint

    return np.asarray(MultiPoint(corners).convex_hull.exterior.coords)


def _placed_hull(hull_pts, se2):
    x, y, theta = se2
    c, s = np.cos(theta), np.sin(theta)
    rot = hull_pts @ np.array([[c, s], [-s, c]])
    return Polygon(rot + np.array([x, y]))


def stability_check(body, se2_pose, env, margin=None):
    """True iff the center of mass lies inside the support surface with margin.

    The margin defaults to a tenth of the cell width; this is the
    operational meaning of "stable under gravity" for a flat table.
    """
    if margin is None:
        margin = STABILITY_MARGIN_FRACTION * body.cell_width
    pose = place_at(body, se2_pose)
    com = center_of_mass(body, pose)
    return env.margin_inside_table(com) >= margin


def state_is_stable(body, state, env, margin=None):
    """Stability of an arbitrary stacked state (COM against the table)."""
    if margin is None:
        margin = STABILITY_MARGIN_FRACTION * body.cell_width
    com = center_of_mass(body, state.pose)
    return env.margin_inside_table(com) >= margin


def collision_free(body, se2_pose, env, hull_pts=None):
    """True iff the body's convex footprint misses every obstacle."""
    if not env._obstacle_polys:
        return True
    if hull_pts is None:
        hull_pts = _hull(body)
    placed = _placed_hull(hull_pts, se2_pose)
    return not any(p.intersects(placed) for p in env._prepared_obstacles)


def _pose_feasible(body, se2, env, hull_pts):
    return stability_check(body, se2, env) and collision_free(body, se2, env, hull_pts)


def _edge_feasible(body, a, b, env, hull_pts, rot_radius, spacing):
    d = _se2_distance(a, b, rot_radius)
    steps = max(2, int(np.ceil(d / spacing)) + 1)
    dth = float(wrap_angle(b[2] - a[2]))
    for t in np.linspace(0.0, 1.0, steps):
        p = (a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]), a[2] + t * dth)
        if not _pose_feasible(body, p, env, hull_pts):
            return False
    return True


def rrt_star_waypoints(body, env, start, goal, seed, config=None):
    """Waypoint poses from start to the goal pose, seeded and deterministic.

    Sampled poses that are unstable or in collision are discarded; the final
    path is shortcut-pruned with the same feasibility checks.
    """
    config = config or PlannerConfig()
    start = np.asarray(start, dtype=float)
    goal_pose = np.asarray(goal.target_pose, dtype=float)
    hull_pts = _hull(body)
    rr = _rot_radius(body)
    if not _pose_feasible(body, start, env, hull_pts):
        raise PlanningError("start pose is unstable or in collision")
    if not _pose_feasible(body, goal_pose, env, hull_pts):
        raise PlanningError("goal pose is unstable or in collision")

    step = config.rrt_step or 2 * body.cell_width
    arrive = max(goal.tolerance, body.cell_width)
    if _se2_distance(start, goal_pose, rr) <= arrive:
        return [tuple(start)]

    rng = stream(seed, "rrt-star")
    xmin, ymin, xmax, ymax = env.bounds()
    nodes = np.zeros((config.rrt_iterations + 1, 3))
    nodes[0] = start
    parent = np.full(config.rrt_iterations + 1, -1, dtype=int)
    cost = np.zeros(config.rrt_iterations + 1)
    count = 1
    best_goal_node = -1
    best_goal_cost = np.inf

    def metric(p, block):
        dp = np.hypot(block[:, 0] - p[0], block[:, 1] - p[1])
        dth = np.abs(wrap_angle(block[:, 2] - p[2]))
        return dp + rr * dth

    for _ in range(config.rrt_iterations):
        if rng.uniform() < config.rrt_goal_bias:
            sample = goal_pose.copy()
        else:
            sample = np.array(
                [
                    rng.uniform(xmin, xmax),
                    rng.uniform(ymin, ymax),
                    rng.uniform(-np.pi, np.pi),
                ]
            )
        dists = metric(sample, nodes[:count])
        near_idx = int(np.argmin(dists))
        base = nodes[near_idx]
        d = float(dists[near_idx])
        if d < 1e-12:
            continue
        frac = min(1.0, step / d)
        new = np.array(
            [
                base[0] + frac * (sample[0] - base[0]),
                base[1] + frac * (sample[1] - base[1]),
                wrap_angle(base[2] + frac * wrap_angle(sample[2] - base[2])),
            ]
        )
        if not _pose_feasible(body, new, env, hull_pts):
            continue
        # choose parent among neighbors, then rewire (shrinking ball)
        radius = max(step, 4 * step * (np.log(count + 1) / (count + 1)) ** (1 / 3))
        neigh_d = metric(new, nodes[:count])
        neigh = np.where(neigh_d <= radius)[0]
        best_parent, best_cost = near_idx, cost[near_idx] + float(neigh_d[near_idx])
        for j in neigh:
            cand = cost[j] + float(neigh_d[j])
            if cand < best_cost and _edge_feasible(
                body, nodes[j], new, env, hull_pts, rr, body.cell_width / 2
            ):
                best_parent, best_cost = int(j), cand
        if best_parent == near_idx and not _edge_feasible(
            body, base, new, env, hull_pts, rr, body.cell_width / 2
        ):
            continue
        nodes[count] = new
        parent[count] = best_parent
        cost[count] = best_cost
        for j in neigh:
            through = best_cost + float(neigh_d[j])
            if through < cost[j] and _edge_feasible(
                body, new, nodes[j], env, hull_pts, rr, body.cell_width / 2
            ):
                parent[j] = count
                cost[j] = through
        if _se2_distance(new, goal_pose, rr) <= arrive:
            total = best_cost + _se2_distance(new, goal_pose, rr)
            if total < best_goal_cost:
                best_goal_cost = total
                best_goal_node = count
        count += 1

    if best_goal_node < 0:
        raise PlanningError(
            f"no path to goal after {config.rrt_iterations} iterations",
            explored=count,
        )
    path = []
    j = best_goal_node
    while j >= 0:
        path.append(tuple(nodes[j]))
        j = int(parent[j])
    path.reverse()
    if _se2_distance(np.asarray(path[-1]), goal_pose, rr) > 1e-12:
        path.append(tuple(goal_pose))
    # waypoints stay at tree resolution: short segments keep the per-push
    # rotation demand small, which is what the contact search can deliver
    return path


def overhang_depth(body, se2_pose, env):
    """Largest distance of any cell center beyond the table boundary."""
    pose = place_at(body, se2_pose)
    pts = pose.reshape(-1, 3)[:, 1:]
    table = env.table_polygon
    depth = 0.0
    for x, y in pts:
        p = Point(x, y)
        if not table.contains(p):
            depth = max(depth, p.distance(table.exterior))
    return depth


def sample_stable_goal(body, env, region, seed, g_min=None, budget=1000):
    """Sample a pose in the region that is stable and graspable.

    Graspable means at least g_min meters of the body overhang the table
    edge (default: one cell width). Pass g_min=0 for interior goals.
    """
    if g_min is None:
        g_min = body.cell_width
    poly = Polygon(region)
    if poly.is_empty:
        raise PlanningError("goal region is empty")
    rng = stream(seed, "goal-sampling")
    xmin, ymin, xmax, ymax = poly.bounds
    for _ in range(budget):
        x = rng.uniform(xmin, xmax)
        y = rng.uniform(ymin, ymax)
        if not poly.contains(Point(x, y)):
            continue
        theta = rng.uniform(-np.pi, np.pi)
        pose = (x, y, theta)
        if not stability_check(body, pose, env):
            continue
        if g_min > 0 and overhang_depth(body, pose, env) < g_min:
            continue
        return np.array(pose)
    raise PlanningError(f"no stable graspable goal found in {budget} samples")


def _outer_ring(body):
    """Outer cells ordered around the body centroid (envelope neighbors)."""
    outer = body.outer_cells()
    ref = body.reference_centers()
    cen = ref.mean(axis=0)
    ang = np.arctan2(ref[outer, 1] - cen[1], ref[outer, 0] - cen[0])
    order = np.argsort(ang, kind="stable")
    return [outer[int(k)] for k in order]


def _contact_direction(body, pose, cell, com):
    """World-frame inward push direction at the cell's exposed face.

    Corner cells pick the face whose inward normal best aligns toward the
    center of mass; scan order breaks ties.
    """
    theta = pose[3 * cell]
    c, s = np.cos(theta), np.sin(theta)
    rot = np.array([[c, -s], [s, c]])
    pos = pose[3 * cell + 1 : 3 * cell + 3]
    to_com = com - pos
    norm = np.linalg.norm(to_com)
    if norm > 1e-12:
        to_com = to_com / norm
    best, best_score = None, -np.inf
    for normal in body.exposed_faces(cell):
        inward = -(rot @ normal)
        score = float(inward @ to_com)
        if score > best_score + 1e-12:
            best, best_score = inward, score
    return best


def _settle(body, state):
    """Rest between pushes, re-anchored on the rigid manifold."""
    pose = rigidify(body, state.pose)
    pose.setflags(write=False)
    return BodyState(pose=pose, velocity=np.zeros_like(state.velocity),
                     time=state.time)


class _PushSearch:
    """Candidate evaluation with caching for one push decision."""

    def __init__(self, body, env, state, target, config, magnitude, counter):
        self.body = body
        self.env = env
        self.state = state
        self.target = target
        self.config = config
        self.magnitude = magnitude
        self.counter = counter
        self.com = center_of_mass(body, state.pose)
        self.cache = {}

    def evaluate(self, cell, steps):
        key = (cell, steps)
        if key in self.cache:
            return self.cache[key]
        direction = _contact_direction(self.body, self.state.pose, cell, self.com)
        force = direction * self.magnitude
        actions = tuple(
            PushAction(contact_cell=cell, force=force, duration=self.config.solver.dt)
            for _ in range(steps)
        )
        try:
            traj = simulate(self.body, self.state, actions, self.config.solver,
                            counter=self.counter)
        except LcpSolveError:
            out = (np.inf, None, actions)
            self.cache[key] = out
            return out
        states = [s for s, _ in traj]
        if not all(state_is_stable(self.body, s, self.env) for s in states):
            gap = np.inf
        else:
            gap = pose_gap(self.body, states[-1].pose, self.target)
        out = (gap, states, actions)
        self.cache[key] = out
        return out


def _ring_neighbors(ring, cell):
    k = ring.index(cell)
    return ring[(k - 1) % len(ring)], ring[(k + 1) % len(ring)]


def _select_push(search, ring, mode, config):
    """Pick (cell, steps): greedy hill-climb or exhaustive over outer cells."""
    base = config.push_steps
    if mode == "exhaustive":
        gaps = {cell: search.evaluate(cell, base)[0] for cell in ring}
        best_cell = min(ring, key=lambda cl: (gaps[cl], cl))
    else:
        target_xy = np.asarray(search.target[:2])
        axis = search.com - target_xy
        axis_norm = np.linalg.norm(axis)
        if axis_norm > 1e-12:
            axis = axis / axis_norm
        pts = search.state.pose.reshape(-1, 3)[:, 1:]
        scores = []
        for cell in ring:
            v = pts[cell] - search.com
            nv = np.linalg.norm(v)
            scores.append(float(axis @ v / nv) if nv > 1e-12 else -np.inf)
        best_cell = ring[int(np.argmax(scores))]
        best_gap = search.evaluate(best_cell, base)[0]
        while True:
            left, right = _ring_neighbors(ring, best_cell)
            candidates = [(search.evaluate(c, base)[0], c) for c in (left, right)]
            gap_new, cell_new = min(candidates, key=lambda t: (t[0], t[1]))
            if gap_new < best_gap:
                best_cell, best_gap = cell_new, gap_new
            else:
                break
    # duration grid on the winner
    variants = [(search.evaluate(best_cell, k)[0], k) for k in config.duration_steps]
    _, best_k = min(variants, key=lambda t: (t[0], t[1]))
    return best_cell, best_k


def _plan(body, env, start, goal, config, seed, mode, counter=None):
    config = config or PlannerConfig()
    counter = counter or CallCounter()
    wp_tol = config.waypoint_tolerance or body.cell_width
    magnitude = config.force_magnitude
    if magnitude is None:
        bound = float(body.friction @ body.mass)
        magnitude = 1.15 * max(bound, 1e-3) / config.solver.dt

    start_pose = body_pose_of(body, start.pose)
    waypoints = rrt_star_waypoints(body, env, start_pose, goal, seed, config)
    start_calls = counter.count

    state = _settle(body, start)
    actions, spans, predicted = [], [], []
    ring = _outer_ring(body)
    ptr = 0
    stall = 0
    while ptr < len(waypoints):
        last = ptr == len(waypoints) - 1
        # plan past the raw tolerance so open-loop execution keeps slack
        tol = config.goal_slack * goal.tolerance if last else wp_tol
        target = np.asarray(waypoints[ptr])
        gap = pose_gap(body, state.pose, target)
        if gap <= tol:
            ptr += 1
            continue
        search = _PushSearch(body, env, state, target, config, magnitude, counter)
        cell, steps = _select_push(search, ring, mode, config)
        new_gap, states, push_actions = search.evaluate(cell, steps)
        if not np.isfinite(new_gap) or new_gap >= gap - config.min_progress:
            stall += 1
            if stall > config.patience:
                raise PlanningError(
                    f"no progress toward waypoint {ptr} after {stall} pushes",
                    last_state=state,
                )
            if not np.isfinite(new_gap):
                # every candidate unstable or unsolvable: nothing to apply
                continue
        else:
            stall = 0
        actions.extend(push_actions)
        predicted.extend(states)
        spans.append(len(push_actions))
        state = _settle(body, states[-1])
    return Plan(
        actions=tuple(actions),
        predicted_states=tuple(predicted),
        waypoints=tuple(tuple(w) for w in waypoints),
        simulator_calls=counter.count - start_calls,
        push_spans=tuple(spans),
        reached_goal=True,
    )


def plan_push_sequence(body, env, start, goal, config=None, seed=0, counter=None):
    """Greedy contact-point planning toward the goal pose."""
    return _plan(body, env, start, goal, config, seed, "greedy", counter)


def exhaustive_contact_search(body, env, start, goal, config=None, seed=0, counter=None):
    """Baseline: every push scores all outer cells before choosing."""
    return _plan(body, env, start, goal, config, seed, "exhaustive", counter)


def execute_plan(body, start, plan, config=None, env=None, counter=None):
    """Replay a plan's pushes on a (possibly different) body.

    Velocity resets between pushes mirror the quasi-static planning
    assumption. Returns (final_state, states, stable_flags); stability flags
    are all True when env is None.
    """
    config = config or SolverConfig()
    state = _settle(body, start)
    states, stable = [], []
    idx = 0
    for span in plan.push_spans:
        chunk = plan.actions[idx : idx + span]
        idx += span
        traj = simulate(body, state, list(chunk), config, counter=counter)
        for s, _ in traj:
            states.append(s)
            stable.append(True if env is None else state_is_stable(body, s, env))
        state = _settle(body, states[-1])
    return state, states, stable
