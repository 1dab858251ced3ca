"""End-to-end experiment harness at desk scale.

A hidden-parameter ground-truth simulator stands in for the robot and camera:
exploration pushes are synthesized with the true parameters, identification
sees only the resulting trajectories, and planned pushes are re-executed with
the true parameters to score success. Model mismatch therefore comes only
from parameter values and injected observation noise, never from divergent
dynamics.
"""

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .body import BodyState, rigidify
from .data import TrajectoryRecord
from .dynamics import CallCounter, SolverConfig, simulate
from .errors import LcpSolveError, PlanningError
from .gradients import squared_loss
from .identify import IdentConfig, evaluate, explore, identify, split_dataset
from .planner import (
    Environment,
    GoalSpec,
    PlannerConfig,
    execute_plan,
    plan_push_sequence,
    pose_gap,
    sample_stable_goal,
)
from .seeding import stream


@dataclass
class ExperimentSpec:
    """One pipeline run: hidden truth, learner settings, goal, seeds."""

    geometry: object  # GridBody supplying the layout and parameter bounds
    true_mass: np.ndarray
    true_friction: np.ndarray
    env: Environment
    exploration_pushes: int = 10
    steps_per_push: int = 8
    exploration_dt: float = 0.01  # gentler than planning pushes
    sigma_pos: float = 0.0
    ident: IdentConfig = field(default_factory=IdentConfig)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    goal: GoalSpec = None  # explicit goal pose, otherwise sampled from region
    goal_region: list = None
    g_min: float = None
    seed: int = 0
    assume_uniform: bool = False  # ablation: skip identification
    out_dir: str = None

    def __post_init__(self):
        if self.exploration_pushes < 2:
            raise ValueError("need at least two pushes (train and test)")

    def true_body(self):
        return self.geometry.with_params(self.true_mass, self.true_friction)


@dataclass
class RunReport:
    """Metrics and accounting from one pipeline run."""

    success: bool = False
    goal_reached: bool = False
    stable_throughout: bool = False
    heldout_error: float = None
    loss_history: list = field(default_factory=list)
    goal_pose: tuple = None
    final_gap: float = None
    simulator_calls: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    stage_errors: dict = field(default_factory=dict)
    plan_pushes: int = 0
    seed: int = 0

    def total_calls(self):
        return sum(self.simulator_calls.values())

    def to_dict(self, include_timings=True):
        out = {
            "success": bool(self.success),
            "goal_reached": bool(self.goal_reached),
            "stable_throughout": bool(self.stable_throughout),
            "heldout_error": self.heldout_error,
            "loss_history": [float(v) for v in self.loss_history],
            "goal_pose": list(self.goal_pose) if self.goal_pose is not None else None,
            "final_gap": self.final_gap,
            "simulator_calls": dict(self.simulator_calls),
            "stage_errors": dict(self.stage_errors),
            "plan_pushes": int(self.plan_pushes),
            "seed": int(self.seed),
        }
        if include_timings:
            out["timings"] = dict(self.timings)
        return out


def generate_dataset(true_body, k_pushes, seed, config=None, steps_per_push=8,
                     sigma_pos=0.0, start_state=None, counter=None, retries=3):
    """Simulate k exploration pushes with the ground-truth parameters.

    Each push applies one random outer-cell force for steps_per_push steps
    from rest, then the body comes to rest where it stopped. Optional
    Gaussian noise with std sigma_pos corrupts recorded cell positions
    (poses only; velocities and actions stay exact).
    """
    if k_pushes < 2:
        raise ValueError("need at least two pushes")
    config = config or SolverConfig()
    actions = explore(true_body, k_pushes, seed, config)
    noise_rng = stream(seed, "observation-noise")
    state = start_state or true_body.initial_state()
    records = []
    for p, action in enumerate(actions):
        attempt = 0
        while True:
            try:
                acts = [action] * steps_per_push
                traj = simulate(true_body, state, acts, config, counter=counter)
                break
            except LcpSolveError:
                attempt += 1
                if attempt > retries:
                    raise
                retry = explore(true_body, 1, seed * 7919 + 31 * p + attempt, config)
                action = retry[0]
        states = (state,) + tuple(s for s, _ in traj)
        if sigma_pos > 0:
            states = tuple(_noisy_state(s, noise_rng, sigma_pos) for s in states)
        records.append(
            TrajectoryRecord(states=states, actions=tuple(acts), label=f"push-{p}")
        )
        # the body settles between pushes: rest, re-anchored on the rigid manifold
        final = traj[-1][0]
        pose = rigidify(true_body, final.pose)
        pose.setflags(write=False)
        state = BodyState(pose=pose, velocity=np.zeros_like(final.velocity), time=0.0)
    return records, state


def _noisy_state(state, rng, sigma):
    pose = np.array(state.pose)
    pose[1::3] += rng.normal(0.0, sigma, size=pose[1::3].shape)
    pose[2::3] += rng.normal(0.0, sigma, size=pose[2::3].shape)
    pose.setflags(write=False)
    return BodyState(pose=pose, velocity=state.velocity, time=state.time)


def _uniform_body(geometry, ident):
    n = geometry.n
    return geometry.with_params(
        np.full(n, 0.5 * ident.mass_max), np.full(n, 0.5 * ident.friction_max)
    )


def run_pipeline(spec):
    """Explore, identify, pick a stable goal, plan, and execute.

    Success means the true body reached the goal within tolerance and stayed
    stable at every executed step. Stage failures are recorded by name and
    later stages are skipped; the report always carries partial metrics.
    """
    report = RunReport(seed=spec.seed)
    true_body = spec.true_body()
    counters = {}

    def phase(name):
        counters[name] = CallCounter()
        return counters[name]

    # exploration with the ground-truth simulator
    t0 = time.perf_counter()
    try:
        explore_cfg = replace(spec.planner.solver, dt=spec.exploration_dt)
        records, end_state = generate_dataset(
            true_body,
            spec.exploration_pushes,
            spec.seed,
            explore_cfg,
            steps_per_push=spec.steps_per_push,
            sigma_pos=spec.sigma_pos,
            counter=phase("exploration"),
        )
        train, test = split_dataset(records, spec.seed)
    except Exception as err:  # noqa: BLE001 - report and stop
        report.stage_errors["exploration"] = str(err)
        report.simulator_calls = {k: c.count for k, c in counters.items()}
        return report
    report.timings["exploration"] = time.perf_counter() - t0

    # identification (or the uniform-assumption ablation)
    t0 = time.perf_counter()
    model = None
    try:
        if spec.assume_uniform:
            model = _uniform_body(spec.geometry, spec.ident)
            phase("identification")
        else:
            result = identify(spec.geometry, train, spec.ident,
                              counter=phase("identification"))
            model = result.body
            report.loss_history = [float(v) for v in result.loss_history]
        _, err = evaluate(model, test, spec.ident, counter=phase("evaluation"))
        report.heldout_error = float(err)
    except Exception as err:  # noqa: BLE001
        report.stage_errors["identification"] = str(err)
    report.timings["identification"] = time.perf_counter() - t0
    if model is None:
        report.simulator_calls = {k: c.count for k, c in counters.items()}
        return report

    # stable goal selection with the identified masses
    t0 = time.perf_counter()
    goal = spec.goal
    try:
        if goal is None:
            pose = sample_stable_goal(model, spec.env, spec.goal_region, spec.seed,
                                      g_min=spec.g_min)
            goal = GoalSpec(target_pose=pose,
                            tolerance=spec.planner.waypoint_tolerance
                            or model.cell_width)
        report.goal_pose = tuple(float(v) for v in goal.target_pose)
    except Exception as err:  # noqa: BLE001
        report.stage_errors["goal"] = str(err)
        goal = None
    report.timings["goal"] = time.perf_counter() - t0
    if goal is None:
        report.simulator_calls = {k: c.count for k, c in counters.items()}
        return report

    # planning with the identified model
    t0 = time.perf_counter()
    plan = None
    try:
        plan = plan_push_sequence(model, spec.env, end_state, goal,
                                  spec.planner, spec.seed,
                                  counter=phase("planning"))
        report.plan_pushes = len(plan.push_spans)
    except (PlanningError, LcpSolveError) as err:
        report.stage_errors["planning"] = str(err)
    report.timings["planning"] = time.perf_counter() - t0
    if plan is None:
        report.simulator_calls = {k: c.count for k, c in counters.items()}
        return report

    # execution with the ground truth
    t0 = time.perf_counter()
    try:
        final, _, stable = execute_plan(true_body, end_state, plan,
                                        spec.planner.solver, env=spec.env,
                                        counter=phase("execution"))
        gap = pose_gap(true_body, final.pose, goal.target_pose)
        report.final_gap = float(gap)
        report.goal_reached = bool(gap <= goal.tolerance)
        report.stable_throughout = bool(all(stable))
        report.success = report.goal_reached and report.stable_throughout
    except LcpSolveError as err:
        report.stage_errors["execution"] = str(err)
    report.timings["execution"] = time.perf_counter() - t0
    report.simulator_calls = {k: c.count for k, c in counters.items()}
    return report


def _heldout(model, test, solver):
    _, err = evaluate(model, test, solver)
    return float(err)


def compare_optimizers(spec, methods, budget=50, checkpoints=5):
    """Identification methods under an identical forward-simulation budget.

    One budget unit is one gradient update (analytical), one candidate loss
    evaluation (sampling searches), or one probe loss evaluation (finite
    differences); held-out evaluations are not charged. Returns rows of
    {method, simulations, heldout_error} suitable for CSV export.
    """
    if not methods:
        raise ValueError("need at least one method")
    true_body = spec.true_body()
    solver = spec.planner.solver
    records, _ = generate_dataset(
        true_body, spec.exploration_pushes, spec.seed,
        replace(solver, dt=spec.exploration_dt),
        steps_per_push=spec.steps_per_push, sigma_pos=spec.sigma_pos,
    )
    train, test = split_dataset(records, spec.seed)
    marks = sorted({max(1, int(round(budget * (k + 1) / checkpoints)))
                    for k in range(checkpoints)})
    rows = []
    for method in methods:
        if method == "analytical":
            curve = _curve_analytical(spec, train, test, marks)
        elif method == "finite-diff":
            curve = _curve_finite_diff(spec, train, test, marks)
        elif method == "random-search":
            curve = _curve_sampling(spec, train, test, marks, weighted=False)
        elif method == "weighted-sampling":
            curve = _curve_sampling(spec, train, test, marks, weighted=True)
        else:
            raise ValueError(f"unknown method {method!r}")
        rows.extend({"method": method, "simulations": s, "heldout_error": e}
                    for s, e in curve)
    return rows


def _curve_analytical(spec, train, test, marks):
    # deterministic SGD: re-running with a smaller budget replays the prefix
    curve = []
    for m in marks:
        cfg = replace(spec.ident, sim_budget=m, epochs=10**6)
        res = identify(spec.geometry, train, cfg)
        curve.append((m, _heldout(res.body, test, cfg.solver)))
    return curve


def _curve_sampling(spec, train, test, marks, weighted):
    ident = spec.ident
    solver = ident.solver
    geom = spec.geometry
    rng = stream(spec.seed, "weighted-sampling" if weighted else "random-search")
    n = geom.n
    best = None
    best_loss = np.inf
    sigma0 = 0.3
    curve = []
    used = 0
    for k in range(max(marks)):
        if best is None or not weighted:
            mass = rng.uniform(0.0, 1.0, n) * ident.mass_max
            mass = np.maximum(mass, 1e-4 * ident.mass_max)
            fric = rng.uniform(0.0, 1.0, n) * ident.friction_max
        else:
            shrink = sigma0 * (1.0 - used / max(marks)) + 0.02
            mass = best[0] + rng.normal(0.0, shrink * ident.mass_max, n)
            fric = best[1] + rng.normal(0.0, shrink * ident.friction_max, n)
            mass = np.clip(mass, 1e-4 * ident.mass_max, ident.mass_max)
            fric = np.clip(fric, 0.0, ident.friction_max)
        cand = geom.with_params(mass, fric)
        val = squared_loss(cand, train, solver)
        used += 1
        if val < best_loss:
            best_loss = val
            best = (mass, fric)
        if used in marks:
            model = geom.with_params(*best)
            curve.append((used, _heldout(model, test, solver)))
    return curve


def _curve_finite_diff(spec, train, test, marks):
    # coordinate descent with central-difference probes, one coordinate at a time
    ident = spec.ident
    solver = ident.solver
    geom = spec.geometry
    rng = stream(spec.seed, "finite-diff-init")
    n = geom.n
    mass = np.full(n, float(rng.uniform(0.2, 0.8)) * ident.mass_max)
    fric = np.full(n, float(rng.uniform(0.2, 0.8)) * ident.friction_max)
    used = 0
    curve = []
    coord = 0
    h = 1e-4
    while used < max(marks):
        i = coord % (2 * n)
        coord += 1
        vec = mass if i < n else fric
        j = i % n
        step = h * max(abs(vec[j]), 1e-3)
        hi = vec.copy(); hi[j] += step
        lo = vec.copy(); lo[j] -= step
        if i < n:
            f_hi = squared_loss(geom.with_params(hi, fric), train, solver)
            f_lo = squared_loss(geom.with_params(np.maximum(lo, 1e-4 * ident.mass_max), fric), train, solver)
        else:
            f_hi = squared_loss(geom.with_params(mass, np.clip(hi, 0, ident.friction_max)), train, solver)
            f_lo = squared_loss(geom.with_params(mass, np.maximum(lo, 0.0)), train, solver)
        grad = (f_hi - f_lo) / (2 * step)
        vec[j] -= ident.learning_rate * grad
        if i < n:
            np.clip(mass, 1e-4 * ident.mass_max, ident.mass_max, out=mass)
        else:
            np.clip(fric, 0.0, ident.friction_max, out=fric)
        used += 2
        passed = [m for m in marks if used - 1 <= m <= used]
        for m in passed:
            model = geom.with_params(mass, fric)
            curve.append((m, _heldout(model, test, solver)))
    return curve
