"""Shared helpers for the test suite."""

import numpy as np
import pytest

from gridpush import (
    BodyState,
    PushAction,
    SolverConfig,
    TrajectoryRecord,
    build_from_occupancy,
    regime_margin,
    simulate,
)

SQUARE_OCCS = {
    1: {(0, 0)},
    4: {(0, 0), (0, 1), (1, 0), (1, 1)},
    9: {(r, c) for r in range(3) for c in range(3)},
    16: {(r, c) for r in range(4) for c in range(4)},
}


def rigid_twist(body, pose, omega, vx, vy, about):
    """Stacked velocity of a common twist about a point, at the given pose."""
    n = body.n
    pts = np.asarray(pose, dtype=float).reshape(-1, 3)[:, 1:]
    vel = np.zeros(3 * n)
    for i in range(n):
        r = pts[i] - np.asarray(about, dtype=float)
        vel[3 * i] = omega
        vel[3 * i + 1] = vx - omega * r[1]
        vel[3 * i + 2] = vy + omega * r[0]
    return vel


def moving_record(occ, seed, config=None, steps=None, param_range=(0.2, 0.95),
                  friction_range=(0.15, 0.9)):
    """A sustained-motion trajectory from a random body, plus a random learner.

    Pushes are scaled to the body's friction bound so motion persists; the
    initial state is a rigid twist. Returns (true_body, learner_body, record).
    """
    config = config or SolverConfig()
    rng = np.random.default_rng(seed)
    n = len(occ)
    body = build_from_occupancy(occ, 0.05, 0.5, 0.5)
    body = body.with_params(
        rng.uniform(*param_range, n), rng.uniform(*friction_range, n)
    )
    s0 = body.initial_state()
    omega = rng.uniform(0.4, 1.2) * rng.choice([-1, 1])
    vt = rng.uniform(0.3, 0.7, 2) * rng.choice([-1, 1], 2)
    ref = body.reference_centers()
    v0 = rigid_twist(body, s0.pose, omega, vt[0], vt[1], ref.mean(axis=0))
    state = BodyState(pose=s0.pose, velocity=v0)
    cell = int(rng.integers(0, n))
    bound = float(body.friction @ body.mass)
    ang = rng.uniform(0, 2 * np.pi)
    force = rng.uniform(1.3, 2.2) * bound / config.dt * np.array(
        [np.cos(ang), np.sin(ang)]
    )
    k = steps or int(rng.integers(3, 6))
    actions = [PushAction(cell, force, duration=config.dt)] * k
    traj = simulate(body, state, actions, config)
    record = TrajectoryRecord(
        states=(state,) + tuple(s for s, _ in traj), actions=tuple(actions)
    )
    learner = body.with_params(
        rng.uniform(*param_range, n), rng.uniform(*friction_range, n)
    )
    return body, learner, record


def clean_gradient_case(occ, base_seed, config=None, margin=1e-4, max_tries=20):
    """moving_record screened away from friction-regime switch boundaries."""
    config = config or SolverConfig()
    for trial in range(max_tries):
        body, learner, record = moving_record(occ, base_seed + 7717 * trial, config)
        if regime_margin(learner, record, config) >= margin:
            return body, learner, record
    raise RuntimeError("could not build a regime-clean case")


def max_rel_error(a, b):
    """Max elementwise relative error with a floor tied to the vector scale."""
    scale = np.maximum(np.abs(b), 1e-3 * max(float(np.abs(b).max()), 1e-300))
    return float(np.max(np.abs(a - b) / scale))


@pytest.fixture
def solver_config():
    return SolverConfig()
