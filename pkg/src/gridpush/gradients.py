"""Simulation loss and its analytical parameter gradients.

The reported loss is the summed per-cell Euclidean position distance between
one-step teacher-forced predictions and the observed next poses (the ADD
metric; angles excluded). Gradients target the squared version of the same
per-step distances, whose derivative through the contact solve has a closed
form: differentiating the solved equations of motion at a moving step and
eliminating the constraint blocks leaves the constrained mobility operator X
applied to the loss velocity-gradient, combined with the friction rows and
the velocity change. A central finite-difference oracle over the same
squared objective is provided for verification.

Only steps where the object is already moving enter the loss and gradients:
the derivation assumes saturated friction rows, and static steps carry a
stick/slip discontinuity.
"""

import time
from dataclasses import dataclass, replace as _dc_replace

import numpy as np

from .body import friction_bound
from .data import TrajectoryRecord
from .dynamics import Mobility, SolverConfig, step_velocity
from .errors import InsufficientExcitationError

# regime split by lam_f as a fraction of the bound: at the bound (saturated),
# at zero (impulse-free), or strictly between (sticking)
SATURATION_FRACTION = 1e-3


@dataclass(frozen=True)
class LossReport:
    """Summed ADD over counted steps plus the per-step breakdown."""

    value: float
    per_step: np.ndarray


@dataclass(frozen=True)
class GradientPair:
    """Per-cell derivatives of the squared prediction loss."""

    d_mass: np.ndarray
    d_friction: np.ndarray


@dataclass(frozen=True)
class StepSolve:
    """Cached forward solve for one teacher-forced step."""

    record_idx: int
    step: int
    solution: object
    predicted_pose: np.ndarray
    error: np.ndarray  # x_pred - x_next with angle slots zeroed


def _as_records(dataset):
    if isinstance(dataset, TrajectoryRecord):
        return [dataset]
    return list(dataset)


def forward_pass(body, dataset, config=None, counter=None):
    """Solve every moving step teacher-forced; shared by loss and gradients."""
    config = config or SolverConfig()
    solves = []
    for ridx, rec in enumerate(_as_records(dataset)):
        if len(rec.states) < 2:
            raise ValueError(
                f"record {rec.label or ridx}: need at least 2 observed states"
            )
        for t in rec.moving_steps():
            st = rec.states[t]
            action = rec.actions[t]
            sol = step_velocity(body, st, action, config, counter=counter)
            pred = st.pose + sol.next_velocity * action.duration
            err = pred - rec.states[t + 1].pose
            err = err.copy()
            err[0::3] = 0.0  # positions only
            solves.append(
                StepSolve(
                    record_idx=ridx, step=t, solution=sol, predicted_pose=pred, error=err
                )
            )
    return solves


def _per_step_add(solves, n):
    out = np.empty(len(solves))
    for k, s in enumerate(solves):
        d = s.error.reshape(-1, 3)[:, 1:]
        out[k] = np.hypot(d[:, 0], d[:, 1]).sum()
    return out


def loss(body, dataset, config=None, solves=None, counter=None):
    """Teacher-forced summed ADD over the dataset's moving steps."""
    if solves is None:
        solves = forward_pass(body, dataset, config, counter=counter)
    per_step = _per_step_add(solves, body.n)
    return LossReport(value=float(per_step.sum()), per_step=per_step)


def squared_loss(body, dataset, config=None, solves=None, counter=None):
    """Sum of squared per-cell position errors; the objective gradients target."""
    if solves is None:
        solves = forward_pass(body, dataset, config, counter=counter)
    return float(sum(s.error @ s.error for s in solves))


def mobility_matrix(body, pose, return_info=False):
    """Dense constrained inverse-mass operator at a pose, shape (3n, 3n).

    Equals Minv + Minv Je^T (-Je Minv Je^T)^{-1} Je Minv; redundant joint
    rows on grids with cycles fall back to the pseudo-inverse, reported via
    the info flag.
    """
    mob = Mobility(body, pose)
    x = mob.dense()
    if return_info:
        return x, {"rank_deficient": mob.rank_deficient}
    return x


def _row_regimes(body, sol, nz):
    """(saturated, sticking) masks over friction rows with nonzero direction."""
    bound = np.maximum(friction_bound(body), 1e-300)
    frac = sol.lambda_f / bound
    saturated = nz & (frac >= 1.0 - SATURATION_FRACTION)
    sticking = nz & (frac > SATURATION_FRACTION) & ~saturated
    return saturated, sticking


def regime_margin(body, dataset, config=None, solves=None):
    """Smallest distance of any friction row from a regime switch.

    Measured as min over rows of max(gamma, rho) for saturated/impulse-free
    rows and min(lam, bound - lam) in velocity units for sticking rows.
    Near-zero margins flag steps where the loss is at a derivative kink;
    gradient checks screen such cases out.
    """
    if solves is None:
        solves = forward_pass(body, dataset, config)
    worst = np.inf
    for s in solves:
        sol = s.solution
        nz = np.abs(sol.j_f).sum(axis=1) > 0.0
        if not nz.any():
            # frictionless breakaway: margin is the distance from sticking,
            # proxied by how decisively the body moved
            worst = min(worst, float(np.abs(sol.next_velocity).max()))
            continue
        sat, stick = _row_regimes(body, sol, nz)
        off = nz & ~sat & ~stick
        if sat.any():
            worst = min(worst, float(sol.gamma[sat].min()))
        if off.any():
            worst = min(worst, float(sol.rho[off].min()))
        if stick.any():
            worst = min(
                worst,
                float(np.minimum(sol.lambda_f[stick], sol.xi[stick]).min()),
            )
    return worst


def _step_gradient(body, rec, solve):
    """Per-cell (d_mass, d_friction) contribution of one cached step.

    Friction rows fall in three regimes: saturated (impulse at the bound,
    sensitive to it), impulse-free, and sticking (interior impulse pinning
    the row's velocity component). Sticking rows persist under parameter
    perturbations, so they enter the mobility operator as extra equalities.
    """
    st = rec.states[solve.step]
    action = rec.actions[solve.step]
    sol = solve.solution
    dt = action.duration
    g = 2.0 * dt * solve.error

    nz = np.abs(sol.j_f).sum(axis=1) > 0.0
    saturated, sticking = _row_regimes(body, sol, nz)

    if sticking.any():
        mob = Mobility(body, st.pose, extra_rows=sol.j_f[sticking])
    else:
        mob = sol.mobility if sol.mobility is not None else Mobility(body, st.pose)
    vvec = mob.apply(g)  # X is symmetric, so X^T g = X g

    dvel = sol.next_velocity - st.velocity
    direct3 = -vvec * dvel  # d/d(diag M) of the momentum term

    u = sol.j_f @ vvec
    u = np.where(saturated, u, 0.0)  # bound sensitivity only at the bound

    w2_6 = body.cell_width**2 / 6.0
    inertia = body.mass * w2_6
    d3 = direct3.reshape(-1, 3)
    u2 = u.reshape(-1, 2)
    d_mass = (
        w2_6 * d3[:, 0]
        + d3[:, 1]
        + d3[:, 2]
        + body.friction * (w2_6 * u2[:, 0] + u2[:, 1])
    )
    d_friction = inertia * u2[:, 0] + body.mass * u2[:, 1]
    return d_mass, d_friction


def gradient_pair(body, dataset, config=None, solves=None, counter=None):
    """Analytical gradients of the squared loss over the dataset.

    When solves is given (from forward_pass) only the gradient accumulation
    runs, which costs a few matrix products per step and no contact solves.
    """
    records = _as_records(dataset)
    if solves is None:
        solves = forward_pass(body, dataset, config, counter=counter)
    if not solves:
        raise InsufficientExcitationError(
            "no moving steps in dataset; gradients are undefined"
        )
    d_mass = np.zeros(body.n)
    d_friction = np.zeros(body.n)
    for s in solves:
        dm, df = _step_gradient(body, records[s.record_idx], s)
        d_mass += dm
        d_friction += df
    if not (np.all(np.isfinite(d_mass)) and np.all(np.isfinite(d_friction))):
        raise FloatingPointError("non-finite gradient entries")
    return GradientPair(d_mass=d_mass, d_friction=d_friction)


def grad_mass(body, dataset, config=None, solves=None):
    """Per-cell derivative of the squared loss w.r.t. cell masses."""
    return gradient_pair(body, dataset, config, solves=solves).d_mass


def grad_friction(body, dataset, config=None, solves=None):
    """Per-cell derivative of the squared loss w.r.t. friction coefficients."""
    return gradient_pair(body, dataset, config, solves=solves).d_friction


def _with_raw_params(body, mass, friction):
    # bypasses bound validation: finite differences may probe outside the box
    m = np.ascontiguousarray(mass, dtype=float)
    f = np.ascontiguousarray(friction, dtype=float)
    m.setflags(write=False)
    f.setflags(write=False)
    return _dc_replace(body, mass=m, friction=f)


def finite_diff_gradient(body, dataset, h=1e-6, config=None, counter=None):
    """Central finite differences of the squared loss over all 2n parameters.

    h is a relative step: each parameter p is perturbed by h * max(|p|, 1e-3).
    Costs 4n full loss evaluations; this is the oracle the analytical
    gradients are validated against.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    config = config or SolverConfig()

    def probe(mass, friction):
        return squared_loss(
            _with_raw_params(body, mass, friction), dataset, config, counter=counter
        )

    d_mass = np.zeros(body.n)
    d_friction = np.zeros(body.n)
    for i in range(body.n):
        step = h * max(abs(body.mass[i]), 1e-3)
        m_hi = body.mass.copy(); m_hi[i] += step
        m_lo = body.mass.copy(); m_lo[i] -= step
        d_mass[i] = (probe(m_hi, body.friction) - probe(m_lo, body.friction)) / (2 * step)
    for i in range(body.n):
        step = h * max(abs(body.friction[i]), 1e-3)
        mu_hi = body.friction.copy(); mu_hi[i] += step
        mu_lo = body.friction.copy(); mu_lo[i] -= step
        d_friction[i] = (probe(body.mass, mu_hi) - probe(body.mass, mu_lo)) / (2 * step)
    return GradientPair(d_mass=d_mass, d_friction=d_friction)


def timed_gradient_vs_simulate(body, dataset, config=None):
    """Wall-clock comparison: gradient accumulation vs one forward pass.

    Returns (gradient_seconds, simulate_seconds, GradientPair). The gradient
    is timed from cached forward solutions, mirroring how identification
    interleaves the two.
    """
    config = config or SolverConfig()
    t0 = time.perf_counter()
    solves = forward_pass(body, dataset, config)
    t1 = time.perf_counter()
    pair = gradient_pair(body, dataset, config, solves=solves)
    t2 = time.perf_counter()
    return t2 - t1, t1 - t0, pair
