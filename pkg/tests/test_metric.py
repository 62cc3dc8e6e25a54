import math

import numpy as np
import pytest

from conesurf.geodesic import ConePolicy, rebranch_forward, trace
from conesurf.metric import (
    DEFAULT_METRIC,
    MetricConfig,
    bowen_contains,
    bowen_max,
    dist_GS,
    dist_surface,
    gs_profile,
    pointwise_profile,
)

T = DEFAULT_METRIC.T
V0 = (math.cos(math.pi / 8), math.sin(math.pi / 8))


def test_dist_surface_identity(octagon):
    d = dist_surface(octagon, (0, (0.1, 0.2)), (0, (0.1, 0.2)))
    assert d.value == 0.0
    assert d.error_bound == 0.0


def test_dist_surface_chord(octagon):
    d = dist_surface(octagon, (0, (0.1, 0.0)), (0, (0.4, 0.2)))
    assert d.value == pytest.approx(math.hypot(0.3, 0.2), abs=1e-12)


def test_dist_surface_center_to_cone_is_circumradius(octagon):
    v = octagon.charts[0].vertices[0]
    d = dist_surface(octagon, (0, (0.0, 0.0)), (0, tuple(v)))
    assert d.value == pytest.approx(1.0, abs=1e-12)
    assert d.error_bound == 0.0


def test_dist_surface_wrap_beats_chord(octagon):
    ap = math.cos(math.pi / 8)
    d = dist_surface(octagon, (0, (ap - 0.05, 0.0)), (0, (-ap + 0.05, 0.0)))
    assert d.value == pytest.approx(0.1, abs=1e-9)


def test_dist_surface_through_cone_pivot(slit_tori):
    # points on either side of a slit endpoint, pivot through the 4pi cone
    c = slit_tori.cones[0].vertex_orbit[0]
    w = slit_tori.charts[c[0]].vertices[c[1]]
    a = (c[0], (w[0] - 0.02, w[1] - 0.01))
    b = (c[0], (w[0] + 0.02, w[1] - 0.01))
    d = dist_surface(slit_tori, a, b)
    assert d.value <= math.hypot(0.04, 0.0) + 1e-9


def test_dist_gs_self_zero(octagon):
    tr = trace(octagon, (0, (0.0, 0.0)), (1.0, 0.0), (-T - 1, T + 1))
    d = dist_GS(octagon, tr, tr)
    assert d.value == 0.0


def test_dist_gs_parallel_closed_form(octagon):
    w = 0.06
    a = trace(octagon, (0, (0.0, 0.0)), (1.0, 0.0), (-T - 1, T + 1))
    b = trace(octagon, (0, (0.0, w)), (1.0, 0.0), (-T - 1, T + 1))
    d = dist_GS(octagon, a, b)
    expect = w * (1.0 - math.exp(-2 * T))
    assert abs(d.value - expect) <= d.error_bound + 1e-9
    assert d.error_bound < 0.01 * w + 1e-4


def test_dist_gs_time_shift_oracle(octagon):
    # compare against a high-resolution quadrature oracle at h/8
    delta = 0.0125
    a = trace(octagon, (0, (0.0, 0.0)), (1.0, 0.0), (-T - 1, T + 1))
    b = trace(octagon, (0, (delta, 0.0)), (1.0, 0.0), (-T - 1, T + 1))
    d = dist_GS(octagon, a, b)
    fine = MetricConfig(T=T, h=DEFAULT_METRIC.h / 8.0)
    d_fine = dist_GS(octagon, a, b, fine)
    assert abs(d.value - d_fine.value) <= d.error_bound + d_fine.error_bound
    assert d.value == pytest.approx(delta * (1 - math.exp(-2 * T)), rel=5e-3)


def test_window_requirement(octagon):
    tr = trace(octagon, (0, (0.0, 0.0)), (1.0, 0.0), (-1.0, 1.0))
    from conesurf import WindowTooSmall

    with pytest.raises(WindowTooSmall):
        dist_GS(octagon, tr, tr)


def _turned_pair(octagon, dtheta, window=14.0):
    pol = ConePolicy(on_cone=math.pi)
    x = trace(
        octagon, (0, (0.0, 0.0)), V0, (-window, window),
        turns_forward=[1.5 * math.pi], turns_backward=[1.5 * math.pi], policy=pol,
    )
    ev = [e for e in x.events if e.time > 0][0]
    y = rebranch_forward(x, ev, 1.5 * math.pi + dtheta, policy=pol)
    return x, y, ev


def test_footpoint_bound_lemma(octagon):
    # d_S(x(0), y(0)) <= 2 d_GS(x, y) + 2 err
    x, y, _ev = _turned_pair(octagon, 0.04)
    d0 = dist_surface(octagon, x.surface_point(0.0), y.surface_point(0.0))
    d = dist_GS(octagon, x, y)
    assert d0.value <= 2 * d.value + 2 * d.error_bound + 1e-12


def test_exponential_closeness_lemma(octagon):
    # traces agreeing on [a, b]: d_GS(g_t x, g_t y) <= e^{-2 min(|t-a|,|t-b|)} + err
    x, y, ev = _turned_pair(octagon, 0.05)
    a, b = x.window[0] + T, ev.time  # identical on (-inf, ev.time]
    step = DEFAULT_METRIC.h
    n = int((b - a) / step)
    tg = a + step * np.arange(n)
    vals, errs = gs_profile(octagon, x, y, tg)
    bound = np.exp(-2 * np.minimum(np.abs(tg - a), np.abs(tg - b)))
    assert np.all(vals <= bound + errs + 1e-9)


def test_flow_lipschitz(octagon):
    x, y, _ev = _turned_pair(octagon, 0.05)
    tg = np.arange(0.0, 2.0, DEFAULT_METRIC.h)
    vals, errs = gs_profile(octagon, x, y, tg)
    d0 = vals[0]
    assert np.all(vals <= np.exp(2 * tg) * d0 + errs + errs[0] * np.exp(2 * tg) + 1e-12)


def test_unstable_expansion_c1(octagon):
    # pair agreeing for t <= r with r = ev.time > 0: C = 1
    x, y, _ev = _turned_pair(octagon, 0.05)
    tg = np.arange(-2.0, 0.0 + 1e-9, DEFAULT_METRIC.h)
    vals, errs = gs_profile(octagon, x, y, tg)
    d0 = vals[-1]
    err0 = errs[-1]
    assert np.all(vals <= np.exp(2 * tg) * d0 + errs + err0 + 1e-12)


def test_center_stable_boundedness(octagon):
    # y(t) = x(t + delta) for all t: D e^{-2t} d_GS(x, y) + 2 delta bound
    delta = 0.015
    x = trace(octagon, (0, (0.0, 0.0)), (1.0, 0.0), (-T - 4, T + 4))
    y = trace(octagon, (0, (delta, 0.0)), (1.0, 0.0), (-T - 4, T + 4))
    tg = np.arange(0.0, 3.0, DEFAULT_METRIC.h)
    vals, errs = gs_profile(octagon, x, y, tg)
    d0 = vals[0]
    D = math.exp(2 * abs(delta))  # r = -inf: e^{max(4r,0)} = 1
    assert np.all(vals <= D * np.exp(-2 * tg) * d0 + 2 * delta + errs + 1e-12)


def test_bowen_contains_cylinder_pair(octagon):
    w = 0.05
    a = trace(octagon, (0, (0.0, 0.0)), (1.0, 0.0), (-T - 2, T + 2))
    b = trace(octagon, (0, (0.0, w)), (1.0, 0.0), (-T - 2, T + 2))
    assert bowen_contains(octagon, a, b, (-1.0, 1.0), 2 * w).definite_in
    assert bowen_contains(octagon, a, b, (-1.0, 1.0), w / 2).definite_out
    assert bowen_contains(octagon, a, a, (-1.0, 1.0), 1e-4).definite_in


def test_bowen_indeterminate_surfaced(octagon):
    w = 0.05
    a = trace(octagon, (0, (0.0, 0.0)), (1.0, 0.0), (-T - 2, T + 2))
    b = trace(octagon, (0, (0.0, w)), (1.0, 0.0), (-T - 2, T + 2))
    target = w * (1 - math.exp(-2 * T))
    res = bowen_contains(octagon, a, b, (-1.0, 1.0), target)
    assert res.indeterminate


def test_bowen_max_band(octagon):
    w = 0.05
    a = trace(octagon, (0, (0.0, 0.0)), (1.0, 0.0), (-T - 2, T + 12))
    b = trace(octagon, (0, (0.0, w)), (1.0, 0.0), (-T - 2, T + 12))
    lo, hi = bowen_max(octagon, a, b, (0.0, 10.0))
    expect = w * (1 - math.exp(-2 * T))
    assert lo <= expect <= hi


def test_pointwise_profile_rules_consistent_with_exact(octagon, rng):
    # rule-based pointwise values agree with the exact distance on close pairs
    x, y, _ev = _turned_pair(octagon, 0.03)
    ugrid = np.arange(-2.0, 2.0, 1 / 16.0)
    D, slack = pointwise_profile(octagon, x, y, ugrid)
    assert np.all(slack == 0.0)
    for i in rng.choice(len(ugrid), size=12, replace=False):
        u = ugrid[i]
        exact = dist_surface(octagon, x.surface_point(u), y.surface_point(u))
        assert D[i] == pytest.approx(exact.value, abs=1e-9)
