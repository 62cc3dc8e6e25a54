import math

import numpy as np
import pytest

from conesurf import ConeHit, NotGeodesic, builtin_octagon
from conesurf.geodesic import (
    ConePolicy,
    closed_geodesics,
    continue_through_cone,
    is_singular_window,
    junction_turn,
    lambda_profile,
    lambda_proxy,
    oriented_connections,
    rebranch_forward,
    saddle_connections,
    trace,
    trace_closed,
)

SIDE = 2 * math.sin(math.pi / 8)
V0 = (math.cos(math.pi / 8), math.sin(math.pi / 8))


def test_center_trace_single_segment(octagon):
    tr = trace(octagon, (0, (0.0, 0.0)), (0.6, 0.8), (0.0, 0.5))
    assert len(tr.segments) == 1
    assert not tr.events


def test_cylinder_direction_no_events(octagon):
    # horizontal through the center is a cylinder core
    tr = trace(octagon, (0, (0.0, 0.0)), (1.0, 0.0), (-25.0, 25.0))
    assert not tr.events
    assert is_singular_window(tr)


def test_cone_hit_carries_continuations(octagon):
    with pytest.raises(ConeHit) as exc:
        trace(octagon, (0, (0.0, 0.0)), V0, (0.0, 2.0))
    hit = exc.value
    assert hit.time == pytest.approx(1.0, abs=1e-12)
    measure = sum(b - a for a, b in hit.continuations)
    assert measure == pytest.approx(4 * math.pi, abs=1e-9)
    tr = continue_through_cone(hit, 1.5 * math.pi)
    (ev,) = tr.events
    assert ev.theta == pytest.approx(1.5 * math.pi)
    assert ev.excess_turn == pytest.approx(0.5 * math.pi)


def test_continuation_rejects_small_angles(octagon):
    with pytest.raises(ConeHit) as exc:
        trace(octagon, (0, (0.0, 0.0)), V0, (0.0, 2.0))
    with pytest.raises(NotGeodesic):
        continue_through_cone(exc.value, 0.9 * math.pi)


def test_straight_pi_continuation_is_singular_candidate(octagon):
    tr = trace(
        octagon, (0, (0.0, 0.0)), V0, (0.0, 3.0), policy=ConePolicy(on_cone=math.pi)
    )
    assert all(e.theta == pytest.approx(math.pi) for e in tr.events)
    assert all(e.excess_turn <= 1e-12 for e in tr.events)
    assert is_singular_window(tr)


def test_retracing_semigroup(octagon):
    tr = trace(
        octagon,
        (0, (0.0, 0.0)),
        V0,
        (-4.0, 4.0),
        turns_forward=[1.5 * math.pi],
        turns_backward=[-1.25 * math.pi],
        policy=ConePolicy(on_cone=math.pi),
    )
    s = 0.7
    c, l = tr.point(s)
    tr2 = trace(
        octagon,
        (c, tuple(l)),
        tuple(tr.direction(s)),
        (-0.5, 3.0),
        turns_forward=[1.5 * math.pi],
        policy=ConePolicy(on_cone=math.pi),
    )
    for t in np.linspace(-0.5, 3.0, 57):
        a = tr.surface_point(s + t)
        b = tr2.surface_point(t)
        assert a.chart == b.chart
        assert np.hypot(*(np.asarray(a.position) - np.asarray(b.position))) < 1e-9


def test_lambda_proxy_values(octagon):
    s0 = octagon.s0
    W = 40.0
    tr = trace(octagon, (0, (0.0, 0.0)), (1.0, 0.0), (-41.0, 41.0))
    assert lambda_proxy(tr, window=W) == 0.0

    # single event at t = 1 with excess pi/2
    tr2 = trace(
        octagon,
        (0, (0.0, 0.0)),
        V0,
        (-41.0, 41.0),
        turns_forward=[1.5 * math.pi],
        policy=ConePolicy(on_cone=math.pi),
    )
    ex = [e for e in tr2.events if e.excess_turn > 1e-9]
    assert len(ex) == 1
    expect = ex[0].excess_turn / max(s0, abs(ex[0].time))
    assert lambda_proxy(tr2, window=W) == pytest.approx(expect, rel=1e-12)

    prof = lambda_profile(tr2, np.array([0.0, 1.0]), window=W)
    assert prof[0] == pytest.approx(expect, rel=1e-12)
    assert prof[1] == pytest.approx(ex[0].excess_turn / s0, rel=1e-12)


def test_lambda_time_reversal_invariance(octagon):
    tr = trace(
        octagon,
        (0, (0.0, 0.0)),
        V0,
        (-41.0, 41.0),
        turns_forward=[1.4 * math.pi],
        turns_backward=[1.4 * math.pi],
        policy=ConePolicy(on_cone=math.pi),
    )
    fwd = [e for e in tr.events if e.time > 0]
    bwd = [e for e in tr.events if e.time < 0]
    assert fwd and bwd
    vals_fwd = sorted(round(e.excess_turn, 12) for e in fwd)
    vals_bwd = sorted(round(e.excess_turn, 12) for e in bwd)
    assert vals_fwd[-1] == vals_bwd[-1]
    assert lambda_proxy(tr, window=40.0) > 0


def test_window_too_small_for_lambda(octagon):
    from conesurf import WindowTooSmall

    tr = trace(octagon, (0, (0.0, 0.0)), (1.0, 0.0), (-1.0, 1.0))
    with pytest.raises(WindowTooSmall):
        lambda_proxy(tr, window=5.0)


def test_saddle_connections_octagon_sides(octagon):
    scs = saddle_connections(octagon, SIDE + 1e-9)
    assert len(scs) == 4
    assert all(abs(s.length - SIDE) < 1e-9 for s in scs)
    assert all(len(s.oriented) == 2 for s in scs)


def test_saddle_connections_below_systole_empty(octagon):
    assert saddle_connections(octagon, 0.5 * SIDE) == []


def test_saddle_symmetry_under_rotation(octagon):
    scs = saddle_connections(octagon, 3.0)
    hols = []
    for s in scs:
        for r in s.oriented:
            hols.append((r.direction[0] * r.length, r.direction[1] * r.length))
    hols = np.asarray(hols)
    c, sn = math.cos(math.pi / 4), math.sin(math.pi / 4)
    rotated = hols @ np.array([[c, sn], [-sn, c]])
    for w in rotated:
        gaps = np.hypot(hols[:, 0] - w[0], hols[:, 1] - w[1])
        assert gaps.min() < 1e-6


def test_saddle_list_stable_under_budget_doubling(octagon):
    a = saddle_connections(octagon, 2.0, chart_budget=250000)
    b = saddle_connections(octagon, 2.0, chart_budget=500000)
    assert [(round(s.length, 9), s.holonomy) for s in a] == [
        (round(s.length, 9), s.holonomy) for s in b
    ]


def _brute_force_cycles(surface, recs, length_bound, max_events):
    """Independent oracle: enumerate all words over oriented connections."""
    found = set()

    def canon(word):
        return min(tuple(word[i:] + word[:i]) for i in range(len(word)))

    def extend(word, total):
        k = len(word)
        if k > 0:
            th = junction_turn(surface, recs[word[-1]], recs[word[0]])
            if th is not None and total <= length_bound:
                ok = all(
                    junction_turn(surface, recs[word[i]], recs[word[i + 1]]) is not None
                    for i in range(k - 1)
                )
                if ok:
                    w = canon(list(word))
                    if all(w != canon(list(w[:p]) * (k // p)) or k % p != 0 or p == k
                           for p in range(1, k)):
                        found.add(w)
        if k == max_events:
            return
        for j in range(len(recs)):
            if total + recs[j].length <= length_bound:
                if k == 0 or junction_turn(surface, recs[word[-1]], recs[j]) is not None:
                    extend(word + [j], total + recs[j].length)

    extend([], 0.0)
    return found


def test_closed_geodesics_match_brute_oracle(octagon):
    bound, events = 1.9, 3
    recs = oriented_connections(octagon, bound)
    expected = _brute_force_cycles(octagon, recs, bound, events)
    got = closed_geodesics(octagon, bound, events)
    chains = [cg for cg in got if cg.kind == "chain"]
    assert len(chains) == len(expected)
    for cg in chains:
        assert all(abs(t) >= math.pi - 1e-9 for t in cg.turns)


def test_closed_geodesics_empty_below_systole(octagon):
    assert closed_geodesics(octagon, 0.5 * SIDE, 3) == []


def test_closed_geodesic_retrace_closes(octagon):
    cgs = closed_geodesics(octagon, 2.0, 2)
    assert cgs
    for cg in cgs[:6]:
        tr = trace_closed(octagon, cg, (-cg.length, 2 * cg.length))
        a = tr.surface_point(0.0)
        b = tr.surface_point(cg.length)
        assert a.chart == b.chart
        assert np.hypot(*(np.asarray(a.position) - np.asarray(b.position))) < 1e-7
        da = tr.direction(0.05)
        db = tr.direction(cg.length + 0.05)
        assert np.hypot(*(da - db)) < 1e-7


def test_cylinders_present_with_witnesses(octagon):
    cgs = closed_geodesics(octagon, 2.0, 2)
    cyls = [c for c in cgs if c.kind == "cylinder"]
    assert cyls
    for c in cyls:
        tr = trace_closed(octagon, c, (-25.0, 25.0))
        assert not tr.events
        assert c.is_singular


def test_rebranch_forward_preserves_history(octagon):
    tr = trace(
        octagon,
        (0, (0.0, 0.0)),
        V0,
        (-3.0, 3.0),
        turns_forward=[1.5 * math.pi],
        turns_backward=[1.5 * math.pi],
        policy=ConePolicy(on_cone=math.pi),
    )
    ev = [e for e in tr.events if e.time > 0][0]
    tr2 = rebranch_forward(tr, ev, 1.3 * math.pi, policy=ConePolicy(on_cone=math.pi))
    for t in np.linspace(-2.9, ev.time - 0.01, 17):
        assert np.hypot(*(tr.planar(t) - tr2.planar(t))) < 1e-12
    assert any(abs(e.theta - 1.3 * math.pi) < 1e-12 for e in tr2.events)


def test_near_cone_ambiguity_raised(octagon):
    from conesurf import NumericalAmbiguity

    v = np.asarray(V0)
    n = np.array([-v[1], v[0]])
    start = -0.5 * v + 5e-10 * n
    with pytest.raises(NumericalAmbiguity):
        trace(octagon, (0, tuple(start)), tuple(v), (0.0, 2.0))
    # snapping policy treats it as a hit instead
    with pytest.raises(ConeHit):
        trace(octagon, (0, tuple(start)), tuple(v), (0.0, 2.0),
              policy=ConePolicy(near_cone="snap"))
    # above the incidence tolerance the default policy passes cleanly,
    # while a widened snap tolerance still flags the pass
    start2 = -0.5 * v + 5e-8 * n
    tr = trace(octagon, (0, tuple(start2)), tuple(v), (0.0, 2.0))
    assert not tr.events
    with pytest.raises(NumericalAmbiguity):
        trace(octagon, (0, tuple(start2)), tuple(v), (0.0, 2.0),
              policy=ConePolicy(near_cone="raise", snap_tol=1e-7))
