"""Grid-cell body model.

An object is a regular grid of cuboid cells, each carrying its own mass and
friction coefficient. State vectors stack per-cell planar poses in the order
(theta, p_x, p_y), matching the mass-matrix diagonal [I_i, M_i, M_i] with
I_i = M_i * w^2 / 6.

Cell indices follow row-major order of the sorted occupancy coordinates; this
ordering is normative for every file format in the repository. A cell at grid
coordinate (row, col) has reference center (col * w, row * w).
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import BodyError, DisconnectedBodyError

DEFAULT_MASS_MAX = 1.0
DEFAULT_FRICTION_MAX = 1.0

# Grid steps that count as adjacency, in a fixed scan order.
_NEIGHBOR_STEPS = ((0, 1), (1, 0), (0, -1), (-1, 0))


def _frozen(a):
    a = np.array(a, dtype=float)  # own copy; callers keep writable originals
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class GridBody:
    """Immutable cell decomposition: geometry plus per-cell parameters."""

    cell_width: float
    occupancy: tuple  # sorted (row, col) pairs, row-major
    adjacency: tuple  # (i, j) cell-index pairs, i < j, sorted
    mass: np.ndarray  # per-cell masses, shape (n,)
    friction: np.ndarray  # per-cell friction coefficients, shape (n,)
    mass_max: float = DEFAULT_MASS_MAX
    friction_max: float = DEFAULT_FRICTION_MAX
    # reference unit direction from cell i to cell j for each adjacency pair
    pair_dirs: np.ndarray = field(repr=False, default=None)

    @property
    def n(self):
        return len(self.occupancy)

    @property
    def n_pairs(self):
        return len(self.adjacency)

    def reference_centers(self):
        """Cell centers (x, y) in the reference layout, shape (n, 2)."""
        rc = np.asarray(self.occupancy, dtype=float)
        return np.column_stack([rc[:, 1], rc[:, 0]]) * self.cell_width

    def initial_state(self):
        """Body at rest in the reference layout (all angles zero)."""
        pose = np.zeros(3 * self.n)
        pose[1::3] = self.reference_centers()[:, 0]
        pose[2::3] = self.reference_centers()[:, 1]
        return BodyState(pose=_frozen(pose), velocity=_frozen(np.zeros(3 * self.n)), time=0.0)

    def with_params(self, mass=None, friction=None):
        """Same geometry with replaced parameter vectors (validated)."""
        m = self.mass if mass is None else np.asarray(mass, dtype=float)
        f = self.friction if friction is None else np.asarray(friction, dtype=float)
        _check_params(m, f, self.n, self.mass_max, self.friction_max)
        return replace(self, mass=_frozen(m), friction=_frozen(f))

    def outer_cells(self):
        """Indices of cells with at least one exposed face."""
        occ = set(self.occupancy)
        out = []
        for idx, (r, c) in enumerate(self.occupancy):
            if any((r + dr, c + dc) not in occ for dr, dc in _NEIGHBOR_STEPS):
                out.append(idx)
        return out

    def exposed_faces(self, cell):
        """Outward unit normals (reference frame) of the cell's free faces."""
        occ = set(self.occupancy)
        r, c = self.occupancy[cell]
        normals = []
        for dr, dc in _NEIGHBOR_STEPS:
            if (r + dr, c + dc) not in occ:
                normals.append(np.array([float(dc), float(dr)]))
        return normals


@dataclass(frozen=True)
class BodyState:
    """Stacked per-cell (theta, p_x, p_y) pose and velocity at a time."""

    pose: np.ndarray
    velocity: np.ndarray
    time: float = 0.0

    def angles(self):
        return self.pose[0::3]

    def positions(self):
        return self.pose.reshape(-1, 3)[:, 1:]


@dataclass(frozen=True)
class PushAction:
    """One contact force: cell index, planar force, optional torque, duration."""

    contact_cell: int
    force: np.ndarray
    torque: float = 0.0
    duration: float = 0.05

    def wrench(self, n):
        """Generalized force vector, zero except at the contact cell."""
        F = np.zeros(3 * n)
        c = self.contact_cell
        F[3 * c] = self.torque
        F[3 * c + 1] = self.force[0]
        F[3 * c + 2] = self.force[1]
        return F


def _check_params(mass, friction, n, m_max, mu_max):
    if mass.shape != (n,) or friction.shape != (n,):
        raise BodyError(f"parameter vectors must have length {n}")
    if not np.all((mass > 0) & (mass <= m_max)):
        raise BodyError(f"cell masses must lie in (0, {m_max}]")
    if not np.all((friction >= 0) & (friction <= mu_max)):
        raise BodyError(f"friction coefficients must lie in [0, {mu_max}]")


def _connected_component(occupancy, start):
    occ = set(occupancy)
    seen = {start}
    stack = [start]
    while stack:
        r, c = stack.pop()
        for dr, dc in _NEIGHBOR_STEPS:
            nb = (r + dr, c + dc)
            if nb in occ and nb not in seen:
                seen.add(nb)
                stack.append(nb)
    return seen


def build_from_occupancy(occupancy, cell_width, mass_init, friction_init,
                         mass_max=DEFAULT_MASS_MAX, friction_max=DEFAULT_FRICTION_MAX):
    """Build a GridBody with uniform parameters from a set of grid cells.

    Rejects empty or disconnected occupancy and out-of-range initial values.
    """
    cells = sorted({(int(r), int(c)) for r, c in occupancy})
    if not cells:
        raise BodyError("occupancy must be non-empty")
    if cell_width <= 0:
        raise BodyError("cell_width must be positive")
    component = _connected_component(cells, cells[0])
    if len(component) != len(cells):
        # report the smaller side of the split
        rest = set(cells) - component
        offending = component if len(component) <= len(rest) else rest
        raise DisconnectedBodyError(offending)

    index = {cell: i for i, cell in enumerate(cells)}
    pairs = []
    dirs = []
    for (r, c), i in index.items():
        for dr, dc in ((0, 1), (1, 0)):  # scan right/up once per pair
            nb = (r + dr, c + dc)
            if nb in index:
                j = index[nb]
                a, b = (i, j) if i < j else (j, i)
                sign = 1.0 if i < j else -1.0
                pairs.append((a, b))
                dirs.append((sign * dc, sign * dr))
    order = np.argsort([p[0] * len(cells) + p[1] for p in pairs])
    pairs = tuple(pairs[k] for k in order)
    dirs = np.array([dirs[k] for k in order], dtype=float).reshape(-1, 2)

    n = len(cells)
    mass = np.full(n, float(mass_init))
    friction = np.full(n, float(friction_init))
    _check_params(mass, friction, n, mass_max, friction_max)
    return GridBody(
        cell_width=float(cell_width),
        occupancy=tuple(cells),
        adjacency=pairs,
        mass=_frozen(mass),
        friction=_frozen(friction),
        mass_max=float(mass_max),
        friction_max=float(friction_max),
        pair_dirs=_frozen(dirs),
    )


def mass_diagonal(body):
    """Main diagonal [I_1, M_1, M_1, ..., I_n, M_n, M_n], shape (3n,)."""
    d = np.empty(3 * body.n)
    inertia = body.mass * body.cell_width**2 / 6.0
    d[0::3] = inertia
    d[1::3] = body.mass
    d[2::3] = body.mass
    return d


def mass_matrix(body):
    """Diagonal 3n x 3n mass matrix."""
    return np.diag(mass_diagonal(body))


def friction_bound(body):
    """Per-row friction impulse bounds, shape (2n,): (mu_i I_i, mu_i M_i)."""
    b = np.empty(2 * body.n)
    inertia = body.mass * body.cell_width**2 / 6.0
    b[0::2] = body.friction * inertia
    b[1::2] = body.friction * body.mass
    return b


def adjacency_jacobian(body, pose):
    """Joint-constraint Jacobian, shape (3m, 3n).

    Each adjacency pair contributes three rows: two pin the velocity of the
    shared edge midpoint (tracked from both cells through their rotating
    offsets) and one locks the relative angular velocity. Rigid twists about
    any point lie in the null space.
    """
    pose = np.asarray(pose, dtype=float)
    m = body.n_pairs
    J = np.zeros((3 * m, 3 * body.n))
    if m == 0:
        return J
    half = body.cell_width / 2.0
    theta = pose[0::3]
    rows = np.arange(m)
    pi = np.array([p[0] for p in body.adjacency])
    pj = np.array([p[1] for p in body.adjacency])
    d = body.pair_dirs
    ci, si = np.cos(theta[pi]), np.sin(theta[pi])
    cj, sj = np.cos(theta[pj]), np.sin(theta[pj])
    # offset from cell center to the shared midpoint, rotated by the cell angle
    aix = half * (ci * d[:, 0] - si * d[:, 1])
    aiy = half * (si * d[:, 0] + ci * d[:, 1])
    ajx = -half * (cj * d[:, 0] - sj * d[:, 1])
    ajy = -half * (sj * d[:, 0] + cj * d[:, 1])

    J[3 * rows, 3 * pi] = -aiy
    J[3 * rows, 3 * pi + 1] = 1.0
    J[3 * rows + 1, 3 * pi] = aix
    J[3 * rows + 1, 3 * pi + 2] = 1.0
    J[3 * rows, 3 * pj] = ajy
    J[3 * rows, 3 * pj + 1] = -1.0
    J[3 * rows + 1, 3 * pj] = -ajx
    J[3 * rows + 1, 3 * pj + 2] = -1.0
    J[3 * rows + 2, 3 * pi] = 1.0
    J[3 * rows + 2, 3 * pj] = -1.0
    return J


VELOCITY_EPS = 1e-6  # regularization floor for friction directions


def friction_jacobian(body, velocity, dissipative=False):
    """Per-cell friction direction rows, shape (2n, 3n), block diagonal.

    Each cell contributes a rotational row [-sign(omega), 0, 0] and a linear
    row [0, vx/|v|, vy/|v|] with |v| floored at VELOCITY_EPS; sign(omega) is 0
    within the same floor. With dissipative=True the linear row is negated so
    that every row opposes the cell's motion; the dynamics and gradients use
    that orientation when assembling friction impulses.
    """
    velocity = np.asarray(velocity, dtype=float)
    n = body.n
    J = np.zeros((2 * n, 3 * n))
    omega = velocity[0::3]
    vx = velocity[1::3]
    vy = velocity[2::3]
    speed = np.hypot(vx, vy)
    denom = np.maximum(speed, VELOCITY_EPS)
    lin_sign = -1.0 if dissipative else 1.0
    rows = np.arange(n)
    sgn = np.where(omega > VELOCITY_EPS, 1.0, np.where(omega < -VELOCITY_EPS, -1.0, 0.0))
    mask = speed > VELOCITY_EPS
    J[2 * rows, 3 * rows] = -sgn
    J[2 * rows + 1, 3 * rows + 1] = lin_sign * np.where(mask, vx / denom, 0.0)
    J[2 * rows + 1, 3 * rows + 2] = lin_sign * np.where(mask, vy / denom, 0.0)
    return J


def center_of_mass(body, pose):
    """Mass-weighted mean of cell positions, shape (2,)."""
    pose = np.asarray(pose, dtype=float)
    pts = pose.reshape(-1, 3)[:, 1:]
    return body.mass @ pts / body.mass.sum()


def place_at(body, se2_pose):
    """Stacked 3n pose for the body rigidly placed at (x, y, theta).

    The body frame origin is the centroid of the reference cell centers.
    """
    x, y, theta = se2_pose
    ref = body.reference_centers()
    centroid = ref.mean(axis=0)
    c, s = np.cos(theta), np.sin(theta)
    R = np.array([[c, -s], [s, c]])
    pts = (ref - centroid) @ R.T + np.array([x, y])
    pose = np.empty(3 * body.n)
    pose[0::3] = theta
    pose[1::3] = pts[:, 0]
    pose[2::3] = pts[:, 1]
    return pose


def body_pose_of(body, pose):
    """Best-fit (x, y, theta) of a stacked pose: centroid + mean angle."""
    pose = np.asarray(pose, dtype=float)
    pts = pose.reshape(-1, 3)[:, 1:]
    theta = pose[0::3]
    mean_angle = np.arctan2(np.sin(theta).mean(), np.cos(theta).mean())
    centroid = pts.mean(axis=0)
    return np.array([centroid[0], centroid[1], mean_angle])


def rigidify(body, pose):
    """Snap a stacked pose onto the rigid manifold (best-fit placement).

    Euler integration of velocity-level joint constraints lets cell spacing
    creep during rotation, at second order in (dt * angular rate) per step.
    Re-anchoring between pushes, where the body is at rest anyway, stops the
    creep from accumulating across a long session.
    """
    return place_at(body, body_pose_of(body, pose))
