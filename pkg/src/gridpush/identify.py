"""Mass and friction identification by projected gradient descent.

Recorded push trajectories are replayed teacher-forced; each moving step
yields per-cell gradients of the squared prediction error, applied as
stochastic updates with box projection: friction into [0, friction_max],
mass into [eps_mass, mass_max]. The best parameters seen (lowest epoch
training loss) are returned, not the last.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from .body import PushAction
from .data import TrajectoryRecord
from .dynamics import SolverConfig, step_velocity
from .errors import InsufficientExcitationError
from .gradients import StepSolve, _step_gradient
from .seeding import stream

MASS_FLOOR_FRACTION = 1e-4  # lower mass clamp, as a fraction of mass_max


@dataclass
class IdentConfig:
    """Optimizer settings for parameter identification."""

    learning_rate: float = 128.0
    mass_max: float = 1.0
    friction_max: float = 1.0
    epochs: int = 5
    timeout: float = None  # wall-clock seconds, None = no limit
    init: object = "uniform-random"  # or (mass_vector, friction_vector)
    seed: int = 0
    batch: bool = False  # stochastic per-step updates by default
    sim_budget: int = None  # stop after this many forward solves
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.mass_max <= 0 or self.friction_max < 0:
            raise ValueError("parameter bounds must be positive")


@dataclass(frozen=True)
class IdentResult:
    """Identified body, per-epoch training loss, and solve accounting."""

    body: object
    loss_history: np.ndarray
    best_epoch: int
    simulations: int


def _initial_params(geometry, config):
    if config.init == "uniform-random":
        rng = stream(config.seed, "identify-init")
        m0 = float(rng.uniform(0.2, 0.8)) * config.mass_max
        f0 = float(rng.uniform(0.2, 0.8)) * config.friction_max
        return np.full(geometry.n, m0), np.full(geometry.n, f0)
    mass, friction = config.init
    return np.asarray(mass, dtype=float).copy(), np.asarray(friction, dtype=float).copy()


def _project(mass, friction, config):
    floor = MASS_FLOOR_FRACTION * config.mass_max
    np.clip(mass, floor, config.mass_max, out=mass)
    np.clip(friction, 0.0, config.friction_max, out=friction)


def identify(geometry, dataset, config=None, counter=None):
    """Learn per-cell mass and friction from recorded trajectories.

    geometry supplies the cell layout; its parameter values are ignored
    unless config.init passes them explicitly. Updates sweep trajectories in
    order, one step at a time; batch=True accumulates a full pass before
    updating. Epoch loss is the online training ADD accumulated during the
    sweep (no extra forward passes).
    """
    config = config or IdentConfig()
    records = [dataset] if isinstance(dataset, TrajectoryRecord) else list(dataset)
    if not records:
        raise ValueError("dataset must be non-empty")
    steps = [(r, t) for r in records for t in r.moving_steps()]
    if not steps:
        raise InsufficientExcitationError("dataset has no moving steps")

    mass, friction = _initial_params(geometry, config)
    _project(mass, friction, config)
    body = geometry.with_params(mass, friction)

    history = []
    best = (np.inf, body, 0)
    sims = 0
    t_start = time.monotonic()
    stop = False
    for epoch in range(config.epochs):
        epoch_add = 0.0
        if config.batch:
            acc_m = np.zeros(geometry.n)
            acc_f = np.zeros(geometry.n)
        for rec, t in steps:
            st = rec.states[t]
            action = rec.actions[t]
            sol = step_velocity(body, st, action, config.solver, counter=counter)
            sims += 1
            pred = st.pose + sol.next_velocity * action.duration
            err = pred - rec.states[t + 1].pose
            err = err.copy()
            err[0::3] = 0.0
            d = err.reshape(-1, 3)[:, 1:]
            epoch_add += float(np.hypot(d[:, 0], d[:, 1]).sum())
            solve = StepSolve(0, t, sol, pred, err)
            dm, df = _step_gradient(body, rec, solve)
            if not (np.all(np.isfinite(dm)) and np.all(np.isfinite(df))):
                raise FloatingPointError(
                    f"non-finite update at step {t} of record "
                    f"{rec.label or records.index(rec)}"
                )
            if config.batch:
                acc_m += dm
                acc_f += df
            else:
                mass -= config.learning_rate * dm
                friction -= config.learning_rate * df
                _project(mass, friction, config)
                body = geometry.with_params(mass, friction)
            if config.sim_budget is not None and sims >= config.sim_budget:
                stop = True
                break
            if config.timeout is not None and time.monotonic() - t_start > config.timeout:
                stop = True
                break
        if config.batch:
            mass -= config.learning_rate * acc_m
            friction -= config.learning_rate * acc_f
            _project(mass, friction, config)
            body = geometry.with_params(mass, friction)
        history.append(epoch_add)
        if epoch_add < best[0]:
            best = (epoch_add, body, epoch)
        if stop:
            break
    return IdentResult(
        body=best[1],
        loss_history=np.asarray(history),
        best_epoch=best[2],
        simulations=sims,
    )


def evaluate(body, heldout, config=None, counter=None):
    """Mean per-cell position error (meters) on held-out trajectories.

    Teacher-forced one-step predictions over moving steps; the summed ADD is
    divided by (counted steps x cells).
    """
    from .gradients import forward_pass, loss as _loss

    solver = config.solver if isinstance(config, IdentConfig) else (config or SolverConfig())
    records = [heldout] if isinstance(heldout, TrajectoryRecord) else list(heldout)
    if not records:
        raise ValueError("heldout set must be non-empty")
    solves = forward_pass(body, records, solver, counter=counter)
    report = _loss(body, records, solver, solves=solves)
    counted = max(len(solves), 1)
    return report, report.value / (counted * body.n)


def explore(body, k, seed, config=None, force_magnitude=None):
    """k random exploration pushes: outer-cell contacts, inward directions.

    The force magnitude defaults to a multiple of the body's total linear
    friction bound over one step, enough to break away and keep sliding.
    Deterministic under the seed.
    """
    if k < 1:
        raise ValueError("need at least one exploration push")
    config = config or SolverConfig()
    rng = stream(seed, "explore")
    if force_magnitude is None:
        # just above the breakaway bound: sustained sliding at modest speed
        bound = float(body.friction @ body.mass)
        force_magnitude = 1.15 * max(bound, 1e-3) / config.dt
    outer = body.outer_cells()
    actions = []
    for _ in range(k):
        cell = int(outer[rng.integers(0, len(outer))])
        faces = body.exposed_faces(cell)
        normal = faces[int(rng.integers(0, len(faces)))]
        force = -normal * force_magnitude
        force.setflags(write=False)
        actions.append(PushAction(contact_cell=cell, force=force, duration=config.dt))
    return actions


def split_dataset(records, seed, train_fraction=0.5):
    """Seeded train/test split by trajectory."""
    rng = stream(seed, "train-test-split")
    idx = rng.permutation(len(records))
    cut = max(1, int(round(train_fraction * len(records))))
    cut = min(cut, len(records) - 1) if len(records) > 1 else 1
    train = [records[i] for i in sorted(idx[:cut])]
    test = [records[i] for i in sorted(idx[cut:])]
    return train, test
