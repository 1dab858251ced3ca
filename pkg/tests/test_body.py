"""Body model: construction, Jacobians, mass matrix, center of mass."""

import numpy as np
import pytest

from gridpush import (
    BodyError,
    DisconnectedBodyError,
    adjacency_jacobian,
    body_pose_of,
    build_from_occupancy,
    center_of_mass,
    friction_jacobian,
    mass_diagonal,
    mass_matrix,
    place_at,
)
from conftest import rigid_twist


def brute_force_pairs(occupancy):
    cells = sorted(occupancy)
    pairs = set()
    for i, a in enumerate(cells):
        for j, b in enumerate(cells):
            if i < j and abs(a[0] - b[0]) + abs(a[1] - b[1]) == 1:
                pairs.add((i, j))
    return pairs


class TestBuild:
    def test_single_cell(self):
        body = build_from_occupancy({(0, 0)}, 0.05, 0.5, 0.5)
        assert body.n == 1
        assert body.n_pairs == 0

    def test_two_by_two(self):
        body = build_from_occupancy({(0, 0), (0, 1), (1, 0), (1, 1)}, 0.05, 0.5, 0.5)
        assert body.n == 4
        assert body.n_pairs == 4

    def test_l_shape_adjacency_matches_brute_force(self):
        occ = {(0, 0), (0, 1), (1, 0)}
        body = build_from_occupancy(occ, 0.05, 0.5, 0.5)
        assert body.n == 3
        assert body.n_pairs == 2
        assert set(body.adjacency) == brute_force_pairs(occ)
        # (0,1) and (1,0) are diagonal, not adjacent
        i = body.occupancy.index((0, 1))
        j = body.occupancy.index((1, 0))
        assert (min(i, j), max(i, j)) not in set(body.adjacency)

    @pytest.mark.parametrize("occ", [set(), {(0, 0), (2, 2)}, {(0, 0), (1, 1)}])
    def test_rejects_empty_or_disconnected(self, occ):
        with pytest.raises((BodyError, DisconnectedBodyError)):
            build_from_occupancy(occ, 0.05, 0.5, 0.5)

    def test_disconnection_reports_component(self):
        with pytest.raises(DisconnectedBodyError) as err:
            build_from_occupancy({(0, 0), (0, 1), (5, 5)}, 0.05, 0.5, 0.5)
        assert err.value.component == [(5, 5)]

    @pytest.mark.parametrize("m,f", [(0.0, 0.5), (-1.0, 0.5), (2.0, 0.5),
                                     (0.5, -0.1), (0.5, 3.0)])
    def test_rejects_out_of_range_init(self, m, f):
        with pytest.raises(BodyError):
            build_from_occupancy({(0, 0)}, 0.05, m, f)

    def test_initial_state_places_cells_on_grid(self):
        body = build_from_occupancy({(0, 0), (0, 1), (1, 1)}, 0.1, 0.5, 0.5)
        st = body.initial_state()
        assert np.allclose(st.pose[0::3], 0.0)
        np.testing.assert_allclose(st.positions(), body.reference_centers())


class TestMassMatrix:
    def test_single_cell_values(self):
        body = build_from_occupancy({(0, 0)}, 0.1, 1.2, 0.5, mass_max=2.0)
        np.testing.assert_allclose(mass_diagonal(body), [0.002, 1.2, 1.2])

    def test_two_cells(self):
        body = build_from_occupancy({(0, 0), (0, 1)}, 1.0, 1.0, 0.5, mass_max=2.0)
        body = body.with_params([1.0, 2.0], [0.5, 0.5])
        np.testing.assert_allclose(
            mass_diagonal(body), [1 / 6, 1, 1, 1 / 3, 2, 2]
        )

    def test_matrix_is_diagonal_positive_with_cell_pattern(self):
        rng = np.random.default_rng(0)
        body = build_from_occupancy(
            {(r, c) for r in range(2) for c in range(3)}, 0.07, 0.5, 0.5
        )
        body = body.with_params(rng.uniform(0.1, 1.0, 6), rng.uniform(0, 1, 6))
        m = mass_matrix(body)
        assert np.all(np.diag(m) > 0)
        assert np.count_nonzero(m - np.diag(np.diag(m))) == 0
        d = np.diag(m)
        np.testing.assert_allclose(d[1::3], body.mass)
        np.testing.assert_allclose(d[2::3], body.mass)
        np.testing.assert_allclose(d[0::3], body.mass * body.cell_width**2 / 6)


class TestAdjacencyJacobian:
    def test_horizontal_pair_block_at_zero_angle(self):
        body = build_from_occupancy({(0, 0), (0, 1)}, 0.05, 0.5, 0.5)
        je = adjacency_jacobian(body, body.initial_state().pose)
        np.testing.assert_allclose(je[0, 0:3], [0.0, 1.0, 0.0])
        np.testing.assert_allclose(je[1, 0:3], [0.025, 0.0, 1.0])

    def test_block_at_quarter_turn(self):
        body = build_from_occupancy({(0, 0), (0, 1)}, 2.0, 0.5, 0.5)
        pose = body.initial_state().pose.copy()
        pose[0::3] = np.pi / 2
        je = adjacency_jacobian(body, pose)
        np.testing.assert_allclose(je[0, 0:3], [-1.0, 1.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(je[1, 0:3], [0.0, 0.0, 1.0], atol=1e-12)

    def test_rigid_translation_in_null_space(self):
        body = build_from_occupancy({(0, 0), (0, 1), (1, 0)}, 0.05, 0.5, 0.5)
        pose = body.initial_state().pose
        je = adjacency_jacobian(body, pose)
        vel = rigid_twist(body, pose, 0.0, 0.37, -0.81, (0, 0))
        assert np.abs(je @ vel).max() < 1e-12

    @pytest.mark.parametrize("seed", range(5))
    def test_rigid_twist_in_null_space(self, seed):
        rng = np.random.default_rng(seed)
        body = build_from_occupancy(
            {(r, c) for r in range(3) for c in range(3)}, 0.05, 0.5, 0.5
        )
        theta = rng.uniform(-np.pi, np.pi)
        pose = place_at(body, (rng.uniform(-1, 1), rng.uniform(-1, 1), theta))
        je = adjacency_jacobian(body, pose)
        vel = rigid_twist(
            body, pose, rng.uniform(-2, 2), rng.uniform(-1, 1),
            rng.uniform(-1, 1), rng.uniform(-1, 1, 2),
        )
        row_norms = np.linalg.norm(je, axis=1)
        assert np.all(np.abs(je @ vel) <= 1e-9 * np.maximum(row_norms, 1.0))


class TestFrictionJacobian:
    def test_unit_x_velocity_block(self):
        body = build_from_occupancy({(0, 0)}, 0.05, 0.5, 0.5)
        jf = friction_jacobian(body, np.array([0.0, 1.0, 0.0]))
        np.testing.assert_allclose(jf, [[0, 0, 0], [0, 1, 0]])

    def test_mixed_block_values(self):
        body = build_from_occupancy({(0, 0)}, 0.05, 0.5, 0.5)
        jf = friction_jacobian(body, np.array([-2.0, 3.0, 4.0]))
        np.testing.assert_allclose(jf, [[1, 0, 0], [0, 0.6, 0.8]])

    def test_zero_velocity_gives_zero_block(self):
        body = build_from_occupancy({(0, 0)}, 0.05, 0.5, 0.5)
        jf = friction_jacobian(body, np.zeros(3))
        assert np.count_nonzero(jf) == 0

    def test_dissipative_flips_linear_rows_only(self):
        body = build_from_occupancy({(0, 0)}, 0.05, 0.5, 0.5)
        v = np.array([-2.0, 3.0, 4.0])
        jf = friction_jacobian(body, v)
        jd = friction_jacobian(body, v, dissipative=True)
        np.testing.assert_allclose(jd[0], jf[0])
        np.testing.assert_allclose(jd[1], -jf[1])

    def test_row_norms(self):
        rng = np.random.default_rng(3)
        body = build_from_occupancy(
            {(r, c) for r in range(2) for c in range(2)}, 0.05, 0.5, 0.5
        )
        vel = rng.normal(0, 0.5, 12)
        vel[4] = 0.0  # a stationary linear pair
        vel[5] = 0.0
        jf = friction_jacobian(body, vel)
        lin_rows = jf[1::2]
        speeds = np.hypot(vel[1::3], vel[2::3])
        for row, speed in zip(lin_rows, speeds):
            norm = np.linalg.norm(row)
            if speed >= 1e-6:
                assert abs(norm - 1.0) < 1e-12
            else:
                assert norm <= 1.0


class TestCenterOfMass:
    def test_uniform_square_symmetry(self):
        body = build_from_occupancy({(0, 0), (0, 1), (1, 0), (1, 1)}, 1.0, 0.5, 0.5)
        com = center_of_mass(body, body.initial_state().pose)
        np.testing.assert_allclose(com, [0.5, 0.5])

    def test_weighted_mean(self):
        body = build_from_occupancy({(0, 0), (0, 1)}, 1.0, 1.0, 0.5, mass_max=4.0)
        body = body.with_params([1.0, 3.0], [0.5, 0.5])
        com = center_of_mass(body, body.initial_state().pose)
        np.testing.assert_allclose(com, [0.75, 0.0])

    def test_matches_direct_summation_oracle(self):
        rng = np.random.default_rng(11)
        body = build_from_occupancy(
            {(r, c) for r in range(3) for c in range(2)}, 0.05, 0.5, 0.5
        )
        body = body.with_params(rng.uniform(0.1, 1.0, 6), rng.uniform(0, 1, 6))
        pose = place_at(body, (0.3, -0.2, 0.7))
        com = center_of_mass(body, pose)
        pts = pose.reshape(-1, 3)[:, 1:]
        expected = sum(m * p for m, p in zip(body.mass, pts)) / body.mass.sum()
        np.testing.assert_allclose(com, expected, atol=1e-15)

    def test_translation_equivariance(self):
        rng = np.random.default_rng(4)
        body = build_from_occupancy({(0, 0), (1, 0), (2, 0)}, 0.05, 0.5, 0.5)
        body = body.with_params(rng.uniform(0.1, 1, 3), rng.uniform(0, 1, 3))
        pose = body.initial_state().pose.copy()
        shift = np.array([0.123, -0.456])
        shifted = pose.copy()
        shifted[1::3] += shift[0]
        shifted[2::3] += shift[1]
        np.testing.assert_allclose(
            center_of_mass(body, shifted), center_of_mass(body, pose) + shift,
            rtol=0, atol=1e-15,
        )


class TestPlacement:
    def test_place_and_recover_pose(self):
        body = build_from_occupancy(
            {(r, c) for r in range(2) for c in range(3)}, 0.05, 0.5, 0.5
        )
        target = np.array([0.4, -0.3, 1.1])
        pose = place_at(body, target)
        np.testing.assert_allclose(body_pose_of(body, pose), target, atol=1e-12)
