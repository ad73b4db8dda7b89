import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation

from hbubble.analytic import sphere_level, sphere_map
from hbubble.errors import ConfigError
from hbubble.fields import radial_field
from hbubble.functionals import dirichlet, volume
from hbubble.mesh import build_icosphere, icosphere_outward, inverse_stereographic, stereographic
from hbubble.minimax import (
    _local_boundary,
    build_ball_grid,
    deform_family,
    degree,
    estimate_levels,
    family_degree,
    family_summary,
    homotopy_check,
    init_family,
)
from hbubble.optimize import DescentOptions

SPHERE_V, SPHERE_F = icosphere_outward(2)
FIELD = radial_field(0.4)


@pytest.fixture(scope="module")
def family():
    grid = build_ball_grid(20.0, 3)
    return init_family(grid, build_icosphere(3), 1.0)


class TestDegree:
    def test_identity(self):
        assert degree(SPHERE_V, SPHERE_F, (0.1, 0.0, 0.0)).degree == 1

    def test_constant(self):
        d = degree(np.tile([2.0, 0.0, 0.0], (len(SPHERE_V), 1)), SPHERE_F, np.zeros(3))
        assert d.degree == 0 and d.admissible

    def test_antipodal(self):
        assert degree(-SPHERE_V, SPHERE_F, np.zeros(3)).degree == -1

    def test_reflection(self):
        assert degree(SPHERE_V * np.array([-1.0, 1.0, 1.0]), SPHERE_F, np.zeros(3)).degree == -1

    def test_outside_point(self):
        assert degree(SPHERE_V, SPHERE_F, (3.0, 0.0, 0.0)).degree == 0

    def test_inadmissible(self):
        d = degree(SPHERE_V, SPHERE_F, SPHERE_V[5])
        assert d.degree is None and not d.admissible and d.min_distance == 0.0

    @settings(max_examples=40, deadline=None)
    @given(
        st.lists(st.floats(-np.pi, np.pi), min_size=3, max_size=3),
        st.floats(0.2, 5.0),
        st.lists(st.floats(-0.5, 0.5), min_size=3, max_size=3),
    )
    def test_orientation_preserving_similarity(self, rotvec, scale, shift):
        R = Rotation.from_rotvec(rotvec).as_matrix()
        g = scale * SPHERE_V @ R.T + np.array(shift) * scale
        assert degree(g, SPHERE_F, np.zeros(3)).degree == 1

    def test_wrapped_twice(self):
        # z -> z^2 on the Riemann sphere has degree 2
        v, f = icosphere_outward(5)
        z, pole = stereographic(v)
        w = z[:, 0] + 1j * z[:, 1]
        sq = np.where(pole, 0, w**2)
        img = inverse_stereographic(np.column_stack([sq.real, sq.imag]))
        img[pole] = v[pole]
        d = degree(img, f, (0.0, 0.0, -0.2))
        assert d.degree == 2


class TestGrid:
    def test_counts(self):
        grid = build_ball_grid(20.0, 5)
        assert len(grid) == 1 + 5 * 42
        assert grid.boundary_flags.sum() == 42
        np.testing.assert_allclose(np.linalg.norm(grid.samples[grid.boundary_indices], axis=1), 20.0)
        assert all(len(nb) > 0 for nb in grid.neighbors)
        assert all(i in grid.neighbors[j] for i, nb in enumerate(grid.neighbors) for j in nb)

    def test_boundary_triangles_outward(self):
        grid = build_ball_grid(3.0, 2)
        idx, tris = _local_boundary(grid)
        assert degree(grid.samples[idx], tris, np.zeros(3)).degree == 1

    def test_rejects(self):
        with pytest.raises(ConfigError):
            build_ball_grid(0.0, 3)
        with pytest.raises(ConfigError):
            build_ball_grid(5.0, 1)


class TestFamily:
    def test_members_on_constraint(self, family):
        for i in (0, 10, len(family.members) - 1):
            assert volume(family.member(i)) == pytest.approx(1.0, rel=1e-12)

    def test_energies_above_discrete_sphere_level(self, family):
        e = family.update_energies(FIELD)
        floor = dirichlet(sphere_map(family.mesh, np.zeros(3), 1.0))
        assert np.all(e > floor)
        c0, c = estimate_levels(family, FIELD)
        assert c0 <= c
        assert c <= sphere_level(1.0) + 2 * 0.4 * (9 * np.pi / 16) ** (1 / 3) + 1e-2

    def test_degree_and_homotopy(self, family):
        d = family_degree(family, (0.1, 0.0, 0.0))
        assert d.degree == 1 and d.admissible
        assert homotopy_check(family, (0.1, 0.0, 0.0))
        with pytest.raises(ConfigError):
            homotopy_check(family, (1.5, 0.0, 0.0))

    def test_deformation(self):
        grid = build_ball_grid(20.0, 3)
        fam = init_family(grid, build_icosphere(2), 1.0)
        boundary_before = fam.members[grid.boundary_flags].copy()
        _, c_before = estimate_levels(fam, FIELD)
        fam, history = deform_family(fam, FIELD, DescentOptions(), sweeps=5)
        assert len(history) == 5
        assert history[-1] <= c_before + 1e-12
        np.testing.assert_array_equal(fam.members[grid.boundary_flags], boundary_before)
        if "continuity_failed" not in fam.flags:
            assert fam.max_neighbor_distance() <= fam.continuity_cap * (1 + 1e-9)
        summary = family_summary(fam, FIELD)
        assert summary["degree"] == 1 and summary["homotopy_admissible"]
        assert summary["n_members"] == len(grid)

    def test_sweeps_validated(self, family):
        with pytest.raises(ConfigError):
            deform_family(family, FIELD, sweeps=0)
