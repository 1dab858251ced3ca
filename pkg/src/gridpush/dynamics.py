"""Quasi-static contact dynamics as a mixed linear complementarity problem.

One step solves, for the next velocity v', impulses lam_e (joints) and lam_f
(friction magnitudes), slack pairs (rho, lam_f) and (xi, gamma):

    M v' = M v + dt F + Je^T lam_e + Jf^T lam_f
    Je v' = 0
    rho = Jf v' + gamma >= 0,   xi = bound - lam_f >= 0
    rho o lam_f = 0,            xi o gamma = 0,      lam_f, gamma >= 0

with Jf the dissipative friction-direction rows frozen at the current
velocity and bound the per-row Coulomb impulse limits (mu_i I_i, mu_i M_i).
Moving rows saturate (lam_f = bound); stationary rows stay below it.

The solver is a primal-dual interior point on the reduced friction system,
with a projected Gauss-Seidel sweep as fallback. Joint constraints are
eliminated exactly through the constrained mobility operator, so equality
residuals are at solver precision by construction.
"""

from dataclasses import dataclass, replace

import numpy as np

from .body import (
    BodyState,
    adjacency_jacobian,
    friction_bound,
    friction_jacobian,
    mass_diagonal,
    VELOCITY_EPS,
)
from .errors import LcpSolveError


@dataclass
class SolverConfig:
    """Solver knobs: iteration cap, residual target, default step length."""

    max_iterations: int = 200
    tolerance: float = 1e-8
    dt: float = 0.05

    def __post_init__(self):
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")
        if self.dt <= 0:
            raise ValueError("dt must be positive")


@dataclass
class CallCounter:
    """Counts forward contact solves, shared across pipeline phases."""

    count: int = 0

    def add(self, k=1):
        self.count += k


@dataclass(frozen=True)
class LcpSolution:
    """One dynamics solve: next velocity, impulses, slacks, and residual."""

    next_velocity: np.ndarray
    lambda_e: np.ndarray
    lambda_f: np.ndarray
    gamma: np.ndarray
    rho: np.ndarray
    xi: np.ndarray
    residual: float
    iterations: int = 0
    # friction rows actually assembled for this step (dissipative orientation)
    j_f: np.ndarray = None
    stuck: bool = False
    # pose-local solve operator, kept so gradient evaluation can reuse it
    mobility: object = None


class Mobility:
    """Joint-constrained inverse mass operator for a fixed pose.

    Applies X = Minv - Minv Je^T (Je Minv Je^T)^+ Je Minv, the top-left block
    of the inverse KKT matrix. Redundant joint rows (grids with cycles) are
    handled by the pseudo-inverse; joint impulses are then minimum-norm.
    """

    def __init__(self, body, pose, extra_rows=None):
        self.minv = 1.0 / mass_diagonal(body)
        self.je = adjacency_jacobian(body, pose)
        self.rank_deficient = body.n_pairs > body.n - 1
        if extra_rows is not None and len(extra_rows):
            # extra velocity-level equalities (e.g. sticking friction rows)
            self.je = np.vstack([self.je, extra_rows])
            self.rank_deficient = True
        if self.je.shape[0] == 0:
            self._a = None
            return
        a = self.je * self.minv  # Je @ Minv, (3m, 3n)
        s = a @ self.je.T
        if self.rank_deficient:
            # grids with cycles carry redundant joint rows: pseudo-inverse
            w, q = np.linalg.eigh(s)
            cut = 1e-12 * max(float(w[-1]), 1e-300)
            winv = np.where(w > cut, 1.0 / np.where(w > cut, w, 1.0), 0.0)
            self._factor = (q, winv)
            self._sinv = None
        else:
            self._sinv = np.linalg.inv(s)
            self._factor = None
        self._a = a

    def _ssolve(self, z):
        if self._sinv is not None:
            return self._sinv @ z
        q, winv = self._factor
        t = q.T @ z
        t *= winv[:, None] if t.ndim == 2 else winv
        return q @ t

    def _solve(self, rhs):
        """(v, lam_s) with M v = rhs + Je^T lam_s and Je v = 0.

        One round of iterative refinement keeps the joint rows at machine
        precision even for extreme cell-mass ratios.
        """
        v = (self.minv if rhs.ndim == 1 else self.minv[:, None]) * rhs
        if self._a is None:
            return v, np.zeros(0)
        lam = -self._ssolve(self._a @ rhs)
        v = v + self._a.T @ lam
        corr = self._ssolve(self.je @ v)
        v = v - self._a.T @ corr
        lam = lam - corr
        return v, lam

    def apply(self, rhs):
        """v solving M v = rhs subject to Je v = 0 (rhs may be (3n,) or (3n, k))."""
        return self._solve(rhs)[0]

    def joint_impulse(self, rhs):
        """lam_e for the same solve (minimum-norm on redundant rows)."""
        return self._solve(rhs)[1]

    def dense(self):
        """The full 3n x 3n operator matrix."""
        x = np.diag(self.minv)
        if self._a is not None:
            x = x - self._a.T @ self._ssolve(self._a)
        return x


def _ip_boxed_lcp(w, c, bound, tol, max_iter):
    """Interior-point solve of: rho = W lam + c + gamma, xi = bound - lam,
    all of (lam, gamma, rho, xi) >= 0, lam o rho = 0, gamma o xi = 0.

    Returns (lam, gamma, iterations) or None on failure. Rows must have
    bound > 0.
    """
    k = len(c)
    scale = max(1.0, float(np.abs(c).max()), float(bound.max()))
    lam = 0.5 * bound
    xi = bound - lam
    s = w @ lam + c
    gamma = np.maximum(0.1 * scale, 0.1 * scale - s)
    rho = s + gamma

    for it in range(max_iter):
        gap = float(lam @ rho + gamma @ xi) / (2 * k)
        if max(float((lam * rho).max()), float((gamma * xi).max())) <= tol:
            return lam, gamma, it
        d = rho / lam + gamma / xi
        a_mat = w + np.diag(d)

        def newton(rc1, rc2):
            rhs = rc1 / lam - rc2 / xi
            dl = np.linalg.solve(a_mat, rhs)
            dgam = (rc2 + gamma * dl) / xi
            drho = w @ dl + dgam
            dxi = -dl
            return dl, dgam, drho, dxi

        # affine predictor
        dl, dgam, drho, dxi = newton(-lam * rho, -gamma * xi)
        alpha = _step_length(lam, dl, rho, drho, gamma, dgam, xi, dxi)
        mu_aff = (
            float((lam + alpha * dl) @ (rho + alpha * drho))
            + float((gamma + alpha * dgam) @ (xi + alpha * dxi))
        ) / (2 * k)
        sigma = min(1.0, max(0.0, mu_aff / max(gap, 1e-300))) ** 3
        # corrector
        rc1 = sigma * gap - lam * rho - dl * drho
        rc2 = sigma * gap - gamma * xi - dgam * dxi
        dl, dgam, drho, dxi = newton(rc1, rc2)
        alpha = 0.99 * _step_length(lam, dl, rho, drho, gamma, dgam, xi, dxi)
        alpha = min(1.0, alpha)
        lam = lam + alpha * dl
        gamma = gamma + alpha * dgam
        rho = rho + alpha * drho
        xi = xi + alpha * dxi
    return None


def _step_length(lam, dl, rho, drho, gamma, dgam, xi, dxi):
    alpha = 1.0
    for v, dv in ((lam, dl), (rho, drho), (gamma, dgam), (xi, dxi)):
        neg = dv < 0
        if np.any(neg):
            alpha = min(alpha, float(np.min(-v[neg] / dv[neg])))
    return alpha


def _pgs_boxed_lcp(w, c, bound, tol, max_sweeps=5000):
    """Projected Gauss-Seidel fallback on the same boxed problem."""
    k = len(c)
    lam = np.zeros(k)
    diag = np.diag(w).copy()
    usable = diag > 1e-14
    for it in range(max_sweeps):
        for r in range(k):
            if not usable[r]:
                lam[r] = 0.0
                continue
            g = w[r] @ lam + c[r]
            lam[r] = min(max(lam[r] - g / diag[r], 0.0), bound[r])
        s = w @ lam + c
        phi = lam - np.clip(lam - s, 0.0, bound)
        if float(np.abs(phi).max()) <= tol:
            break
    gamma = np.maximum(0.0, -(w @ lam + c))
    gamma[lam < bound - 1e-12] = 0.0
    return lam, gamma, it + 1


_MOBILITY_CACHE = {}
_MOBILITY_CACHE_MAX = 8


def cached_mobility(body, pose):
    """Small FIFO cache: planner candidates branch many solves off one pose."""
    key = (id(body), pose.tobytes())
    hit = _MOBILITY_CACHE.get(key)
    if hit is not None and hit[0] is body:
        return hit[1]
    mob = Mobility(body, pose)
    if len(_MOBILITY_CACHE) >= _MOBILITY_CACHE_MAX:
        _MOBILITY_CACHE.pop(next(iter(_MOBILITY_CACHE)))
    _MOBILITY_CACHE[key] = (body, mob)
    return mob


def _assemble_and_solve(body, mob, j_f, q, config):
    """Solve the mixed LCP for one step given the friction rows j_f."""
    bound = friction_bound(body)
    row_norm = np.abs(j_f).sum(axis=1)
    active = (bound > 1e-14) & (row_norm > 0.0)
    k = int(active.sum())

    lam_f = np.zeros(2 * body.n)
    gamma = np.zeros(2 * body.n)
    iterations = 0
    if k > 0:
        ja = j_f[active]
        xj = mob.apply(ja.T)  # X @ ja^T, shape (3n, k)
        w = ja @ xj
        w = 0.5 * (w + w.T)
        c = ja @ mob.apply(q)
        scale = max(1.0, float(bound[active].max())) * max(1.0, float(np.abs(c).max()))
        # products must land well under the residual target whatever the scale
        ip_tol = min(max(1e-12 * scale, 1e-13), 0.01 * config.tolerance)
        out = _ip_boxed_lcp(w, c, bound[active], ip_tol, config.max_iterations)
        if out is None:
            lam_a, gam_a, iterations = _pgs_boxed_lcp(w, c, bound[active], ip_tol)
        else:
            lam_a, gam_a, iterations = out
        lam_f[active] = lam_a
        gamma[active] = gam_a

    rhs = q + j_f.T @ lam_f
    v, lam_e = mob._solve(rhs)
    jv = j_f @ v
    # inactive rows: impulse-free; gamma balances any negative sliding rate
    inactive = ~active
    gamma[inactive] = np.maximum(0.0, -jv[inactive])
    rho = jv + gamma
    xi = bound - lam_f
    return v, lam_e, lam_f, gamma, rho, xi, iterations


def solution_residual(body, state, action, solution):
    """Max violation of the step's equations of motion and complementarity.

    Recomputed from scratch; used both by the solver and by validity tests.
    """
    mdiag = mass_diagonal(body)
    q = mdiag * state.velocity + action.duration * action.wrench(body.n)
    je = adjacency_jacobian(body, state.pose)
    j_f = solution.j_f
    bound = friction_bound(body)
    v = solution.next_velocity
    r_mom = -mdiag * v + j_f.T @ solution.lambda_f + q
    if je.shape[0]:
        r_mom = r_mom + je.T @ solution.lambda_e
        r_joint = float(np.abs(je @ v).max())
    else:
        r_joint = 0.0
    parts = [
        float(np.abs(r_mom).max()),
        r_joint,
        float(np.abs(solution.rho - j_f @ v - solution.gamma).max()),
        float(np.abs(solution.xi + solution.lambda_f - bound).max()),
        float(np.abs(solution.lambda_f * solution.rho).max()),
        float(np.abs(solution.gamma * solution.xi).max()),
        max(
            0.0,
            -float(
                min(
                    solution.lambda_f.min(),
                    solution.gamma.min(),
                    solution.rho.min(),
                    solution.xi.min(),
                )
            ),
        ),
    ]
    return max(parts)


def step_velocity(body, state, action, config, counter=None):
    """One dynamics step: next velocity and impulses for the given action.

    The friction direction is frozen at the current velocity. From rest the
    direction is undefined, so a frictionless trial step supplies it for the
    static test: if bounded friction can hold the body, it stays at rest;
    otherwise the step is the frictionless breakaway transient.
    """
    if counter is not None:
        counter.add()
    if len(state.pose) != 3 * body.n or len(state.velocity) != 3 * body.n:
        raise ValueError("state vectors inconsistent with body size")
    if not 0 <= action.contact_cell < body.n:
        raise ValueError(f"contact cell {action.contact_cell} out of range")

    mdiag = mass_diagonal(body)
    q = mdiag * state.velocity + action.duration * action.wrench(body.n)
    mob = cached_mobility(body, state.pose)

    moving = float(np.abs(state.velocity).max()) > VELOCITY_EPS
    if moving:
        j_f = friction_jacobian(body, state.velocity, dissipative=True)
        sol = _finish(body, state, action, config, mob, j_f, q)
        return sol

    # at rest: frictionless trial supplies the impending direction
    v_free, lam_free = mob._solve(q)
    j_trial = friction_jacobian(body, v_free, dissipative=True)
    sol = _finish(body, state, action, config, mob, j_trial, q)
    if float(np.abs(sol.next_velocity).max()) <= 10 * VELOCITY_EPS:
        return replace(sol, stuck=True)
    # breakaway: friction direction undefined at rest, one frictionless step
    j_f = np.zeros((2 * body.n, 3 * body.n))
    free = LcpSolution(
        next_velocity=v_free,
        lambda_e=lam_free,
        lambda_f=np.zeros(2 * body.n),
        gamma=np.zeros(2 * body.n),
        rho=np.zeros(2 * body.n),
        xi=friction_bound(body),
        residual=0.0,
        j_f=j_f,
        iterations=sol.iterations,
        mobility=mob,
    )
    res = solution_residual(body, state, action, free)
    return replace(free, residual=res)


def _finish(body, state, action, config, mob, j_f, q):
    v, lam_e, lam_f, gamma, rho, xi, iters = _assemble_and_solve(
        body, mob, j_f, q, config
    )
    sol = LcpSolution(
        next_velocity=v,
        lambda_e=lam_e,
        lambda_f=lam_f,
        gamma=gamma,
        rho=rho,
        xi=xi,
        residual=0.0,
        iterations=iters,
        j_f=j_f,
        mobility=mob,
    )
    res = solution_residual(body, state, action, sol)
    if res > config.tolerance:
        raise LcpSolveError(res, iters)
    return replace(sol, residual=res)


def wrap_angle(theta):
    """Map angles to (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(theta, dtype=float), 2 * np.pi)


def integrate(state, next_velocity, dt):
    """Euler step with the new velocity; angles wrapped to (-pi, pi]."""
    v = np.array(next_velocity, dtype=float)
    pose = state.pose + v * dt
    pose[0::3] = wrap_angle(pose[0::3])
    pose.setflags(write=False)
    v.setflags(write=False)
    return BodyState(pose=pose, velocity=v, time=state.time + dt)


def simulate(body, initial, actions, config, counter=None):
    """Roll the body through a sequence of actions.

    Returns one (state, solution) per action, where the state is the result
    of that action's step. Deterministic given identical inputs.
    """
    if not actions:
        raise ValueError("actions must be non-empty")
    out = []
    state = initial
    for idx, action in enumerate(actions):
        try:
            sol = step_velocity(body, state, action, config, counter=counter)
        except LcpSolveError as err:
            err.step = idx
            err.args = (f"step {idx}: {err.args[0]}",)
            raise
        state = integrate(state, sol.next_velocity, action.duration)
        out.append((state, sol))
    return out
