import numpy as np
import pytest

from softproprio.constraints import (ConstraintSet, ForceConstraint, LengthConstraint, PoseEffector,
                                     PressureConstraint, compute_compliance, effector_rows, effector_values,
                                     force_rows, length_rows, pressure_rows, segment_lengths)
from softproprio.errors import DegenerateSegment, ValidationError
from softproprio.fem import Material, SystemState, assemble_tangent_stiffness, quasi_static_step
from softproprio.geometry import (BarycentricAnchor, TriMesh, anchor_position, barycentric_coords, strip_mesh,
                                  structured_mesh)


@pytest.fixture
def strip():
    return strip_mesh(120.0, 3.0), Material(30e6, 0.45, 15.0)


@pytest.fixture
def box_with_cavity():
    return structured_mesh(np.arange(7.0), np.arange(5.0), holes=[(1, 5, 1, 3)])


def rigid_rotation(q, angle, center):
    c, s = np.cos(angle), np.sin(angle)
    x = np.asarray(q).reshape(-1, 2) - center
    return (x @ np.array([[c, -s], [s, c]]).T + center).ravel()


class TestForceRows:
    def test_vertex_anchor(self, strip):
        m, _ = strip
        a = barycentric_coords(m, m.vertices[40])
        row = force_rows(m, ForceConstraint(a, (0.0, 1.0)))
        expected = np.zeros(m.n_dofs)
        expected[2 * 40 + 1] = 1.0
        np.testing.assert_allclose(row, expected, atol=1e-12)

    def test_weight_split(self, strip):
        m, _ = strip
        tri = m.triangles[5]
        row = force_rows(m, ForceConstraint(BarycentricAnchor(5, (0.5, 0.5, 0.0)), (1.0, 0.0)))
        assert row[2 * tri[0]] == 0.5 and row[2 * tri[1]] == 0.5
        assert np.count_nonzero(row) == 2

    def test_virtual_work(self, strip):
        m, _ = strip
        rng = np.random.default_rng(0)
        a = barycentric_coords(m, (33.3, 2.2))
        d = np.array([0.6, -0.8])
        row = force_rows(m, ForceConstraint(a, d))
        dq = rng.normal(size=m.n_dofs)
        disp = anchor_position(m, a, m.rest_q + dq) - anchor_position(m, a, m.rest_q)
        assert row @ dq == pytest.approx(d @ disp, rel=1e-12)

    def test_direction_must_be_unit(self, strip):
        m, _ = strip
        with pytest.raises(ValidationError):
            ForceConstraint(barycentric_coords(m, (1, 1)), (1.0, 1.0))


class TestPressureRows:
    def test_single_edge_hand_value(self):
        # edge from (0,0) to (2,0): length 2 mm, right-hand normal (0, -1), thickness 1 mm
        m = TriMesh([[0, 0], [2, 0], [0, 2]], [[0, 1, 2]], None, {0})
        row = pressure_rows(m, PressureConstraint(((0, 1),)), m.rest_q, 1.0)
        np.testing.assert_allclose(row.reshape(-1, 2), [[0, -1], [0, -1], [0, 0]], atol=1e-15)

    def test_closed_loop_has_zero_net_force(self, box_with_cavity):
        m = box_with_cavity
        loops = m.boundary_loops()
        cavity = min(loops, key=len)
        c = PressureConstraint.from_boundary_loop(m, cavity)
        assert c.closed
        rng = np.random.default_rng(2)
        q = m.rest_q + rng.normal(0, 0.05, m.n_dofs)
        f = (pressure_rows(m, c, q, 10.0) * 0.0015).reshape(-1, 2)
        assert np.abs(f.sum(axis=0)).max() < 1e-9

    def test_linear_in_pressure(self, box_with_cavity):
        m = box_with_cavity
        c = PressureConstraint.from_boundary_loop(m, min(m.boundary_loops(), key=len))
        row = pressure_rows(m, c, m.rest_q, 2.0)
        np.testing.assert_allclose(row * 2e-3, 2 * (row * 1e-3))

    def test_pushes_walls_outward(self, box_with_cavity):
        m = box_with_cavity
        c = PressureConstraint.from_boundary_loop(m, min(m.boundary_loops(), key=len))
        f = pressure_rows(m, c, m.rest_q, 1.0).reshape(-1, 2)
        top = np.nonzero(np.isclose(m.vertices[:, 1], 3) & (m.vertices[:, 0] > 1) & (m.vertices[:, 0] < 5))[0]
        assert np.all(f[top, 1] > 0)

    def test_rejects_noncontiguous_edges(self):
        with pytest.raises(ValidationError):
            PressureConstraint(((0, 1), (2, 3)))


class TestLengthRows:
    def test_axis_aligned_segment(self, strip):
        m, _ = strip
        anchors = [barycentric_coords(m, (0.0, 0.0)), barycentric_coords(m, (5.0, 0.0))]
        c = LengthConstraint.from_anchors(m, anchors)
        row = length_rows(m, c, m.rest_q)[0].reshape(-1, 2)
        i0 = int(np.argmin(np.hypot(*(m.vertices - [0, 0]).T)))
        i1 = int(np.argmin(np.hypot(*(m.vertices - [5, 0]).T)))
        np.testing.assert_allclose(row[i0], [-1, 0], atol=1e-12)
        np.testing.assert_allclose(row[i1], [1, 0], atol=1e-12)
        assert np.count_nonzero(row) == 2

    def test_finite_difference(self, strip):
        m, _ = strip
        pts = [(0, 0), (17, 1), (41, 2.5), (80, 0.5)]
        c = LengthConstraint.from_anchors(m, [barycentric_coords(m, p) for p in pts])
        rng = np.random.default_rng(4)
        q = m.rest_q + rng.normal(0, 0.2, m.n_dofs)
        dq = rng.normal(size=m.n_dofs)
        h = 1e-6
        fd = (segment_lengths(m, c, q + h * dq) - segment_lengths(m, c, q - h * dq)) / (2 * h)
        np.testing.assert_allclose(length_rows(m, c, q) @ dq, fd, rtol=1e-6, atol=1e-9)

    def test_translation_invariant(self, strip):
        m, _ = strip
        c = LengthConstraint.from_anchors(m, [barycentric_coords(m, p) for p in [(0, 0), (30, 3)]])
        np.testing.assert_allclose(length_rows(m, c, m.rest_q) @ np.tile([1.3, -0.7], m.n_vertices), 0,
                                   atol=1e-12)

    def test_collapsed_segment(self, strip):
        m, _ = strip
        c = LengthConstraint.from_anchors(m, [barycentric_coords(m, p) for p in [(0, 0), (5, 0)]])
        q = m.rest_q.copy().reshape(-1, 2)
        q[:, 0] = 0.0
        with pytest.raises(DegenerateSegment):
            length_rows(m, c, q.ravel())


class TestEffectorRows:
    def test_position_at_vertex(self, strip):
        m, _ = strip
        e = PoseEffector(barycentric_coords(m, m.vertices[10]), "position")
        rows = effector_rows(m, e, m.rest_q)
        np.testing.assert_allclose(rows[:, 20:22], np.eye(2), atol=1e-12)
        assert np.count_nonzero(np.abs(rows) > 1e-12) == 2

    @pytest.mark.parametrize("center", [(0.0, 0.0), (50.0, -20.0)])
    def test_orientation_small_rigid_rotation(self, strip, center):
        m, _ = strip
        e = PoseEffector(barycentric_coords(m, (61, 1)), "orientation")
        theta = 1e-4
        dq = rigid_rotation(m.rest_q, theta, center) - m.rest_q
        assert effector_rows(m, e, m.rest_q)[0] @ dq == pytest.approx(theta, rel=1e-6)
        assert effector_values(m, e, m.rest_q + dq)[0] == pytest.approx(theta, rel=1e-9)

    def test_orientation_translation(self, strip):
        m, _ = strip
        e = PoseEffector(barycentric_coords(m, (61, 1)), "orientation")
        assert abs(effector_rows(m, e, m.rest_q)[0] @ np.tile([2.0, 1.0], m.n_vertices)) < 1e-12


class TestCompliance:
    def _setup(self, strip):
        m, mat = strip
        K = assemble_tangent_stiffness(m, mat, m.rest_q)
        c = ConstraintSet(m, mat.thickness, forces=[
            ForceConstraint(barycentric_coords(m, (x, 0)), (0.0, 1.0)) for x in (30, 70, 120)])
        return m, mat, K, c

    def test_self_compliance_positive(self, strip):
        m, mat, K, c = self._setup(strip)
        H = c.actuation_rows(m.rest_q)[:1]
        assert compute_compliance(K, H, H)[0, 0] > 0

    def test_symmetric_psd(self, strip):
        m, mat, K, c = self._setup(strip)
        H = c.actuation_rows(m.rest_q)
        W = compute_compliance(K, H, H)
        assert np.abs(W - W.T).max() < 1e-8 * np.abs(W).max()
        assert np.linalg.eigvalsh(W).min() > -1e-8 * np.abs(W).max()

    def test_reciprocity(self, strip):
        m, mat, K, c = self._setup(strip)
        He = np.vstack([effector_rows(m, PoseEffector(barycentric_coords(m, p)), m.rest_q)
                        for p in [(40, 1.5), (90, 3)]])
        Hf = c.actuation_rows(m.rest_q)
        np.testing.assert_allclose(compute_compliance(K, He, Hf), compute_compliance(K, Hf, He).T, rtol=1e-8)

    def test_cantilever_tip_compliance(self):
        L, h = 100.0, 5.0
        m = structured_mesh(np.linspace(0, L, 201), np.linspace(0, h, 11), pattern="alternate")
        mat = Material(1e9, 0.0, 1.0)
        K = assemble_tangent_stiffness(m, mat, m.rest_q)
        tip = np.nonzero(np.isclose(m.vertices[:, 0], L))[0]
        Hf = np.zeros((1, m.n_dofs))
        Hf[0, 2 * tip + 1] = 1.0 / len(tip)  # unit force shared over the tip section
        W = compute_compliance(K, Hf, Hf)[0, 0]
        EI = 1e3 * h ** 3 / 12
        assert abs(W / (L ** 3 / (3 * EI)) - 1) < 0.05

    def test_predicts_small_step(self, strip):
        m, mat, K, c = self._setup(strip)
        e = [PoseEffector(barycentric_coords(m, p)) for p in [(60, 1.5), (120, 1.5)]]
        He = np.vstack([effector_rows(m, x, m.rest_q) for x in e])
        W = compute_compliance(K, He, c.actuation_rows(m.rest_q))
        errs = []
        for scale in (1e-2, 1e-3):
            dl = scale * np.array([1.0, -0.5, 0.3])
            s = quasi_static_step(SystemState.at_rest(m, 3), m, mat, None, c, dl)
            actual = np.concatenate([effector_values(m, x, s.q) - effector_values(m, x, m.rest_q) for x in e])
            errs.append(np.linalg.norm(W @ dl - actual) / np.linalg.norm(actual))
        assert errs[0] < 0.10 and errs[1] < errs[0]


class TestLengthPreservation:
    def test_pressurized_layer_stays_inextensible(self, box_with_cavity):
        m = box_with_cavity
        mat = Material(1e6, 0.45, 10.0)
        cavity = min(m.boundary_loops(), key=len)
        layer = LengthConstraint.from_anchors(m, [barycentric_coords(m, (x, 0.0)) for x in range(7)])
        c = ConstraintSet(m, mat.thickness, pressures=[PressureConstraint.from_boundary_loop(m, cavity)],
                          lengths=[layer])
        s = SystemState.at_rest(m, 1, c.n_bilateral)
        for p in (0.5e-3, 1e-3, 2e-3):
            s = quasi_static_step(s, m, mat, None, c, [p])
            assert np.abs(c.relative_length_errors(s.q)).max() < 1e-6
        assert np.abs(s.q - m.rest_q).max() > 1e-3
