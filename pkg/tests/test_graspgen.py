import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import bisect

from sqgrasp.errors import DomainError
from sqgrasp.geometry import Pose
from sqgrasp.graspgen import (ASYMPTOTE, CONTINUOUS, GraspCandidate, GripperModel, SamplingConfig,
                              boundary_omegas, candidates_on_sq, dumps_candidates,
                              loads_candidates, sample_cross_section, section_shape,
                              section_slopes, shortest_axis_frame)
from sqgrasp.superquadric import Superquadric, implicit_value


def sq(a, e=(1.0, 1.0), pose=None):
    return Superquadric(a, e, pose or Pose.identity())


def superellipse_value(p, au, av, e):
    return np.abs(p[:, 0] / au) ** (2 / e) + np.abs(p[:, 1] / av) ** (2 / e)


def dense_curve(au, av, e, n=10000):
    w = np.linspace(-math.pi, math.pi, n + 1)
    c, s = np.cos(w), np.sin(w)
    return np.stack([au * np.sign(c) * np.abs(c) ** e, av * np.sign(s) * np.abs(s) ** e], axis=1)


def polyline_distance(p, curve):
    a, b = curve[:-1], curve[1:]
    ab = b - a
    t = np.clip(((p - a) * ab).sum(1) / np.maximum((ab * ab).sum(1), 1e-300), 0, 1)
    return np.linalg.norm(p - (a + t[:, None] * ab), axis=1).min()


def multiset(points, decimals=9):
    return Counter(tuple(np.round(p, decimals) + 0.0) for p in points)


class TestGripperModel:
    def test_defaults_valid(self):
        g = GripperModel()
        assert g.max_opening > 0
        lo, hi = g.closing_region()
        assert hi[1] - lo[1] <= g.max_opening
        np.testing.assert_allclose(np.linalg.norm(g.closing_direction), 1.0, atol=1e-9)

    def test_rejects_narrow_palm(self):
        with pytest.raises(ValueError):
            GripperModel(max_opening=0.2, palm_extent=(0.02, 0.1, 0.02))

    def test_body_points_follow_width(self):
        g = GripperModel()
        narrow, wide = g.body_points(0.02), g.body_points(0.08)
        assert len(narrow) and len(wide)
        fingers = lambda pts: pts[pts[:, 2] > 1e-9]
        assert np.abs(fingers(narrow)[:, 1]).min() == pytest.approx(0.01)
        assert np.abs(fingers(wide)[:, 1]).min() == pytest.approx(0.04)
        # nothing of the body sits inside the closing region
        lo, hi = g.closing_region(0.05)
        b = g.body_points(0.05)
        strictly_inside = np.all((b > lo + 1e-12) & (b < hi - 1e-12), axis=1)
        assert not strictly_inside.any()

    def test_lattice_pitch(self):
        g = GripperModel(lattice_pitch=0.005)
        palm = g.body_points()[g.body_points()[:, 2] <= 0]
        xs = np.unique(np.round(palm[:, 0], 12))
        assert np.diff(xs).max() <= 0.005 + 1e-12

    def test_width_outside_range(self):
        with pytest.raises(ValueError):
            GripperModel().body_points(0.5)

    def test_dict_round_trip(self):
        g = GripperModel(max_opening=0.1, palm_extent=(0.03, 0.2, 0.01))
        assert GripperModel.from_dict(g.to_dict()) == g


class TestShortestAxisFrame:
    def test_z_shortest(self):
        axis, frame = shortest_axis_frame(sq((1, 1, 0.5)))
        assert axis == 2
        np.testing.assert_allclose(frame.rotation, np.eye(3))

    def test_x_shortest(self):
        axis, frame = shortest_axis_frame(sq((0.2, 1, 1)))
        assert axis == 0
        np.testing.assert_allclose(frame.rotation[:, 2], [1, 0, 0])

    def test_tie_prefers_z_then_y(self):
        assert shortest_axis_frame(sq((0.5, 0.5, 0.5)))[0] == 2
        assert shortest_axis_frame(sq((0.5, 0.5, 0.9)))[0] == 1

    def test_frame_is_a_rotation(self, rng):
        for a in ((0.2, 1, 1), (1, 0.2, 1), (1, 1, 0.2)):
            pose = Pose.from_rotvec(rng.normal(size=3), rng.normal(size=3))
            axis, frame = shortest_axis_frame(sq(a, pose=pose))
            assert np.linalg.det(frame.rotation) == pytest.approx(1.0)
            np.testing.assert_allclose(frame.rotation[:, 2], pose.rotation[:, axis], atol=1e-12)
            np.testing.assert_allclose(frame.translation, pose.translation)

    def test_section_exponent(self):
        assert section_shape(sq((1, 1, 0.3), (0.4, 1.5)))[2] == 1.5
        assert section_shape(sq((0.3, 1, 1), (0.4, 1.5)))[2] == 0.4


class TestBoundaryOmegas:
    def test_unit_axes(self):
        w1, w2 = boundary_omegas(1.0, 1.0, 0.5, 4.0)
        assert abs(w1 - math.asin(1 / 64)) < 1e-9
        assert abs(w2 - math.acos(1 / 64)) < 1e-9
        assert w1 == pytest.approx(0.0156256, abs=1e-7)
        assert w2 == pytest.approx(1.5551707, abs=1e-7)

    def test_eccentric(self):
        w1, _ = boundary_omegas(2.0, 1.0, 0.5, 4.0)
        assert abs(w1 - math.asin(1 / 16)) < 1e-9
        assert w1 == pytest.approx(0.0625408, abs=1e-7)

    def test_bisection_cross_check(self):
        a_x, a_y, e, thr = 1.0, 1.0, 0.5, 4.0
        w1, w2 = boundary_omegas(a_x, a_y, e, thr)
        b1 = bisect(lambda w: section_slopes(a_x, a_y, e, w)[0] + thr, 1e-12, math.pi / 4,
                    xtol=1e-15)
        b2 = bisect(lambda w: section_slopes(a_x, a_y, e, w)[1] - thr, math.pi / 4,
                    math.pi / 2 - 1e-12, xtol=1e-15)
        assert abs(w1 - b1) < 1e-9
        assert abs(w2 - b2) < 1e-9

    @settings(max_examples=60, deadline=None)
    @given(st.floats(0.05, 2.0), st.floats(0.05, 2.0), st.floats(0.1, 0.9))
    def test_slopes_hit_threshold(self, a_x, a_y, e):
        try:
            w1, w2 = boundary_omegas(a_x, a_y, e, 4.0)
        except DomainError:
            return
        dx, _ = section_slopes(a_x, a_y, e, w1)
        _, dy = section_slopes(a_x, a_y, e, w2)
        assert 0 < w1 < w2 < math.pi / 2
        # near a quadrant end, sin/cos of the float omega carries an absolute error of a few
        # ulps, which the power (e - 1) turns into a relative slope error
        tiny = min(math.sin(w1), math.cos(w2))
        tol = 1e-9 + 4.0 * abs(e - 1.0) * 1e-15 / tiny
        assert abs(abs(dx) - 4.0) < tol
        assert abs(abs(dy) - 4.0) < tol

    def test_no_discontinuity(self):
        with pytest.raises(DomainError):
            boundary_omegas(1.0, 1.0, 1.2, 4.0)

    def test_slope_never_reaches_threshold(self):
        with pytest.raises(DomainError):
            boundary_omegas(10.0, 10.0, 0.5, 4.0)


class TestSampleCrossSection:
    def test_round_section_first_sample(self):
        s = sample_cross_section(sq((1, 1, 0.3)), SamplingConfig(l_t=0.05))
        first = [x for x in s if x.omega == 0.0][0]
        np.testing.assert_allclose(first.point, [1.05, 0.0], atol=1e-15)

    def test_round_section_count_and_mirror_closure(self):
        s = sample_cross_section(sq((1, 1, 0.3)), SamplingConfig(l_t=0.05, samples_per_quadrant=8))
        assert len(s) == 32
        pts = np.array([x.point for x in s])
        base = multiset(pts)
        assert multiset(pts * [-1, 1]) == base
        assert multiset(pts * [1, -1]) == base

    @pytest.mark.parametrize("a,e", [((1, 1, 0.3), (1.0, 0.5)), ((0.8, 0.5, 0.2), (1.0, 0.3)),
                                     ((0.2, 0.7, 0.4), (0.6, 1.0)), ((1.2, 0.4, 0.1), (1.0, 1.4))])
    def test_mirror_closure_with_asymptotes(self, a, e):
        s = sample_cross_section(sq(a, e), SamplingConfig(l_t=0.02))
        pts = np.array([x.point for x in s])
        base = multiset(pts)
        assert multiset(pts * [-1, 1]) == base
        assert multiset(pts * [1, -1]) == base

    def test_square_section_asymptotes(self):
        cfg = SamplingConfig(l_t=0.05, asymptote_samples=4)
        s = sample_cross_section(sq((1, 1, 0.3), (1.0, 0.5)), cfg)
        q1 = s[:len(s) // 4]
        cont = [x for x in q1 if x.region == CONTINUOUS]
        asym = [x for x in q1 if x.region == ASYMPTOTE]
        assert len(cont) == cfg.samples_per_quadrant
        assert len(asym) == 2 * cfg.asymptote_samples
        w1, w2 = boundary_omegas(1.0, 1.0, 0.5)
        assert cont[0].omega == pytest.approx(w1)
        assert cont[-1].omega == pytest.approx(w2)
        start = 1.05 * np.array([math.cos(w1) ** 0.5, math.sin(w1) ** 0.5])
        np.testing.assert_allclose(cont[0].point, start, atol=1e-12)
        # the first segment runs from the boundary point to the axis intercept
        np.testing.assert_allclose(asym[cfg.asymptote_samples - 1].point, [1.05, 0.0], atol=1e-12)
        np.testing.assert_allclose(asym[-1].point, [0.0, 1.05], atol=1e-12)
        seg = asym[0].point - start
        np.testing.assert_allclose(asym[0].tangent, (np.array([1.05, 0]) - start)
                                   / np.linalg.norm(np.array([1.05, 0]) - start))
        assert np.linalg.norm(seg) > 0

    def test_asymptote_samples_stay_outside(self):
        cfg = SamplingConfig(l_t=0.05)
        s = sample_cross_section(sq((1, 1, 0.3), (1.0, 0.5)), cfg)
        asym = np.array([x.point for x in s if x.region == ASYMPTOTE])
        assert np.all(superellipse_value(asym, 1.0, 1.0, 0.5) > 1)
        curve = dense_curve(1.0, 1.0, 0.5)
        assert min(polyline_distance(p, curve) for p in asym) >= cfg.l_t / 2

    @pytest.mark.parametrize("au,av,e", [(1.0, 1.0, 1.0), (0.6, 0.3, 1.0), (0.5, 0.45, 1.5),
                                         (0.3, 0.25, 1.9)])
    def test_offset_distance_band(self, au, av, e):
        l_t = 0.01
        shape = sq((au, av, 0.1), (1.0, e))
        s = sample_cross_section(shape, SamplingConfig(l_t=l_t))
        curve = dense_curve(au, av, e)
        for x in s:
            d = polyline_distance(x.point, curve)
            assert 0.5 * l_t <= d <= 2 * l_t

    def test_tangents_are_unit_and_tangent(self):
        s = sample_cross_section(sq((0.6, 0.3, 0.1), (1.0, 1.3)), SamplingConfig(l_t=0.0))
        for x in s:
            assert np.linalg.norm(x.tangent) == pytest.approx(1.0)
        # finite-difference check on one continuous sample
        au, av, e = 0.6, 0.3, 1.3
        w = [x for x in s if x.omega is not None and 0 < x.omega < math.pi / 2][0].omega
        h = 1e-7
        p = lambda t: np.array([au * math.cos(t) ** e, av * math.sin(t) ** e])
        fd = (p(w + h) - p(w - h)) / (2 * h)
        t = [x for x in s if x.omega == w][0].tangent
        assert abs(abs(np.dot(fd / np.linalg.norm(fd), t)) - 1) < 1e-6

    def test_steep_section_falls_back_to_curve(self):
        # large semi-axes never reach the slope threshold: plain curve sampling
        s = sample_cross_section(sq((10, 10, 1), (1.0, 0.5)), SamplingConfig())
        assert all(x.region == CONTINUOUS for x in s)


class TestCandidates:
    def test_width_and_closing_axis(self, rng):
        pose = Pose.from_rotvec(rng.normal(size=3), rng.normal(size=3))
        shape = sq((1, 1, 0.3), pose=pose)
        g = GripperModel(max_opening=0.8, palm_extent=(0.02, 0.9, 0.02))
        cands = candidates_on_sq(shape, g, SamplingConfig(l_t=0.01))
        assert len(cands) == 64
        assert cands.rejected_width == 0
        for c in cands:
            assert c.closing_width == pytest.approx(0.62)
            y = c.pose.rotation[:, 1]
            assert abs(abs(np.dot(y, pose.rotation[:, 2])) - 1) < 1e-12

    def test_too_thick(self):
        g = GripperModel(max_opening=0.8, palm_extent=(0.02, 0.9, 0.02))
        cands = candidates_on_sq(sq((1, 1, 0.5)), g, SamplingConfig())
        assert len(cands) == 0
        assert cands.rejected_width == 64

    def test_centers_outside_and_approach_points_inward(self, rng):
        g = GripperModel(max_opening=0.8, palm_extent=(0.02, 0.9, 0.02))
        for a, e in (((1, 0.6, 0.3), (0.7, 0.4)), ((0.2, 0.5, 0.9), (1.5, 1.0)),
                     ((0.6, 0.1, 0.5), (0.3, 1.8))):
            pose = Pose.from_rotvec(rng.normal(size=3), rng.normal(size=3))
            shape = sq(a, e, pose)
            for c in candidates_on_sq(shape, g, SamplingConfig(l_t=0.01)):
                assert implicit_value(shape, c.pose.translation) > 1
                r = c.pose.rotation
                assert np.linalg.det(r) == pytest.approx(1.0, abs=1e-9)
                np.testing.assert_allclose(r.T @ r, np.eye(3), atol=1e-9)
                to_center = shape.center - c.pose.translation
                assert np.dot(r[:, 2], to_center) > 0
                # approach lies in the section plane
                axis, _ = shortest_axis_frame(shape)
                assert abs(np.dot(r[:, 2], pose.rotation[:, axis])) < 1e-9

    def test_flipped_variant(self):
        g = GripperModel(max_opening=0.8, palm_extent=(0.02, 0.9, 0.02))
        cands = candidates_on_sq(sq((1, 1, 0.3)), g, SamplingConfig())
        a, b = cands[0], cands[1]
        np.testing.assert_allclose(b.pose.rotation, a.pose.rotation @ np.diag([-1, -1, 1]))
        np.testing.assert_array_equal(a.pose.translation, b.pose.translation)
        single = candidates_on_sq(sq((1, 1, 0.3)), g, SamplingConfig(generate_flipped=False))
        assert len(single) == len(cands) // 2

    def test_json_round_trip(self):
        g = GripperModel(max_opening=0.8, palm_extent=(0.02, 0.9, 0.02))
        cands = candidates_on_sq(sq((1, 0.8, 0.3), (1.0, 0.5)), g, SamplingConfig(), 3)
        assert any(c.omega is None for c in cands)
        back = loads_candidates(dumps_candidates(cands))
        assert back == list(cands)
        assert all(isinstance(c, GraspCandidate) for c in back)


class TestSamplingConfig:
    @pytest.mark.parametrize("kw", [{"l_t": -0.1}, {"samples_per_quadrant": 0},
                                    {"asymptote_samples": 0}, {"slope_threshold": 0}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            SamplingConfig(**kw)
