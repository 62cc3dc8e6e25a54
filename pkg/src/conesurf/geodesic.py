"""Unit-speed geodesic tracing through charts and cone points.

A trace is a list of straight segments developed into a common plane,
broken at chart crossings (invisible on the surface) and at cone events.
Turning angles follow the signed convention: theta in (-L/2, L/2], with
|theta| >= pi the geodesic condition and positive sign a counterclockwise
turn relative to the incoming segment.
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import (
    BudgetExceeded,
    ConeHit,
    ConesurfError,
    GeometryError,
    NotGeodesic,
    NumericalAmbiguity,
    WindowTooSmall,
)
from .surface import TWO_PI, DevelopedFrame, develop_across

TOL = 1e-9
DIR_TOL = 1e-12


@dataclass(frozen=True)
class SurfacePoint:
    chart: int
    position: tuple

    def as_array(self):
        return np.asarray(self.position, dtype=float)


@dataclass(frozen=True)
class ConeEvent:
    time: float
    cone: int  # ConeClass id
    theta: float
    excess_turn: float


@dataclass(frozen=True)
class Segment:
    chart: int
    offset: tuple  # developing-frame translation
    start: tuple  # planar position at t0
    direction: tuple  # planar unit vector
    t0: float
    dur: float

    @property
    def frame(self):
        return DevelopedFrame(self.chart, self.offset)

    def at(self, t):
        return np.asarray(self.start) + (t - self.t0) * np.asarray(self.direction)


@dataclass(frozen=True)
class ConePolicy:
    """How tracing reacts to cone points along the way.

    on_cone: 'raise', a fixed signed turning angle, or a callable
        (surface, cone_class, time) -> angle, consulted once the explicit
        turn queue is exhausted.
    near_cone: 'raise' (NumericalAmbiguity), 'snap' (treat as a hit) or
        'ignore' for passes within snap_tol of a cone vertex.
    """

    on_cone: object = "raise"
    near_cone: str = "raise"
    snap_tol: float = 1e-9


DEFAULT_POLICY = ConePolicy()


class GeodesicTrace:
    """Unit-speed geodesic over a window [a, b] containing the marked time 0."""

    def __init__(self, surface, window, segments, events, period=None):
        self.surface = surface
        self.window = (float(window[0]), float(window[1]))
        self.segments = tuple(segments)
        self.events = tuple(sorted(events, key=lambda e: e.time))
        self.period = period
        self._t0s = np.array([s.t0 for s in self.segments])
        self._starts = np.array([s.start for s in self.segments])
        self._dirs = np.array([s.direction for s in self.segments])
        self._offsets = np.array([s.offset for s in self.segments])
        self._charts = np.array([s.chart for s in self.segments], dtype=int)
        if not (self.window[0] <= 0.0 <= self.window[1]):
            raise WindowTooSmall("trace window must contain the marked time 0")

    def _seg_index(self, t):
        i = int(np.searchsorted(self._t0s, t, side="right")) - 1
        return max(0, min(i, len(self.segments) - 1))

    def segment_at(self, t):
        return self.segments[self._seg_index(t)]

    def planar(self, t):
        return self.segment_at(t).at(t)

    def direction(self, t):
        return np.asarray(self.segment_at(t).direction)

    def point(self, t):
        seg = self.segment_at(t)
        return seg.chart, seg.at(t) - np.asarray(seg.offset)

    def surface_point(self, t):
        chart, local = self.point(t)
        c, p = self.surface.canonical_point(chart, local)
        return SurfacePoint(c, (float(p[0]), float(p[1])))

    def sample(self, ts):
        """Vectorized evaluation: planar points, chart ids, frame offsets, dirs."""
        ts = np.asarray(ts, dtype=float)
        idx = np.clip(
            np.searchsorted(self._t0s, ts, side="right") - 1, 0, len(self.segments) - 1
        )
        pos = self._starts[idx] + (ts - self._t0s[idx])[:, None] * self._dirs[idx]
        return pos, self._charts[idx], self._offsets[idx], self._dirs[idx]

    def covers(self, a, b):
        return self.window[0] <= a + TOL and b - TOL <= self.window[1]

    def require_window(self, a, b):
        if not self.covers(a, b):
            raise WindowTooSmall(
                f"trace covers [{self.window[0]:.6g}, {self.window[1]:.6g}], "
                f"needs [{a:.6g}, {b:.6g}]"
            )

    def events_in(self, lo, hi):
        return [e for e in self.events if lo <= e.time <= hi]

    def shift(self, tau):
        """The flowed trace g_tau applied to this one (time relabeling)."""
        a, b = self.window
        if not (a <= tau <= b):
            raise WindowTooSmall(f"cannot shift by {tau:.6g}: window [{a:.6g}, {b:.6g}]")
        segs = [replace(s, t0=s.t0 - tau) for s in self.segments]
        evs = [replace(e, time=e.time - tau) for e in self.events]
        return GeodesicTrace(self.surface, (a - tau, b - tau), segs, evs, period=self.period)

    def __repr__(self):
        a, b = self.window
        return (
            f"GeodesicTrace([{a:.4g},{b:.4g}], {len(self.segments)} segs, "
            f"{len(self.events)} events)"
        )


# -- low-level ray machinery ---------------------------------------------------


class _RayCursor:
    """Mutable state while tracing one ray forward in its own ray time."""

    __slots__ = ("surface", "chart", "offset", "p", "d", "s", "segments", "events", "turns", "flip")

    def __init__(self, surface, chart, offset, p, d, turns, flip=False):
        self.surface = surface
        self.chart = chart
        self.offset = np.asarray(offset, dtype=float)
        self.p = np.asarray(p, dtype=float)
        self.d = np.asarray(d, dtype=float)
        self.s = 0.0
        self.segments = []
        self.events = []
        self.turns = list(turns)
        self.flip = flip  # ray runs in reversed time: flip supplied angles


def _exit_time(ch, pl, d):
    """First positive boundary crossing from local point pl in direction d."""
    best_t, best_e = math.inf, None
    for i in range(ch.n):
        n = ch.normal_out[i]
        den = d[0] * n[0] + d[1] * n[1]
        if den <= DIR_TOL:
            continue
        num = (ch.vertices[i][0] - pl[0]) * n[0] + (ch.vertices[i][1] - pl[1]) * n[1]
        t = num / den
        if -TOL <= t < best_t:
            best_t, best_e = max(t, 0.0), i
    if best_e is None:
        raise GeometryError("ray failed to exit a bounded chart")
    return best_t, best_e


EXACT_HIT_TOL = 1e-12


def _near_cone_pass(cur, horizon, snap_tol):
    """Nearest cone vertex passed within (EXACT_HIT_TOL, snap_tol] before horizon.

    Dead-on hits (perpendicular offset below EXACT_HIT_TOL) are left to the
    exit-vertex incidence logic and are not reported here.
    """
    ch = cur.surface.charts[cur.chart]
    pl = cur.p - cur.offset
    hit = None
    for v in range(ch.n):
        cone = cur.surface.cone_at(cur.chart, v)
        if cone is None:
            continue
        w = ch.vertices[v]
        tv = (w[0] - pl[0]) * cur.d[0] + (w[1] - pl[1]) * cur.d[1]
        if tv <= TOL or tv >= horizon + 2 * TOL:
            continue
        perp = abs((w[0] - pl[0]) * cur.d[1] - (w[1] - pl[1]) * cur.d[0])
        if EXACT_HIT_TOL < perp <= snap_tol and (hit is None or tv < hit[0]):
            hit = (tv, v, cone)
    return hit


def _turn_intervals(total):
    """Admissible signed turning angles at a cone of total angle ``total``."""
    return ((-0.5 * total, -math.pi), (math.pi, 0.5 * total))


def _tau_from_theta(theta, total):
    return theta - math.pi if theta >= math.pi - 1e-12 else theta + total - math.pi


def _theta_from_tau(tau, total):
    ex = total - TWO_PI
    return tau + math.pi if tau <= 0.5 * ex + 1e-15 else tau + math.pi - total


def _reverse_theta(theta, total):
    th = -theta
    if th <= -0.5 * total + 1e-12:
        th = 0.5 * total
    return th


def _normalize_theta(theta, total):
    theta = float(theta)
    if theta <= -0.5 * total - 1e-9 or theta > 0.5 * total + 1e-9:
        raise NotGeodesic(f"turning angle {theta:.6g} outside (-L/2, L/2], L = {total:.6g}")
    if abs(theta) < math.pi - 1e-9:
        raise NotGeodesic(f"turning angle {theta:.6g} violates |theta| >= pi")
    theta = min(max(theta, -0.5 * total), 0.5 * total)
    if theta <= -0.5 * total + 1e-12:
        theta = 0.5 * total
    return theta


def _apply_turn(cur, fan, alpha0, theta, cone, s_hit, vertex_planar):
    theta = _normalize_theta(theta, fan.total)
    tau = _tau_from_theta(theta, fan.total)
    beta = (alpha0 + math.pi + tau) % fan.total
    d_out, corner = fan.direction_at(beta)
    cur.events.append(ConeEvent(s_hit, cone.id, theta, abs(theta) - math.pi))
    cur.chart = corner.chart
    cur.offset = np.asarray(corner.frame.offset, dtype=float)
    cur.p = np.asarray(vertex_planar, dtype=float)
    cur.d = d_out
    cur.s = s_hit


def _flat_pass(cur, vertex, s_hit, vertex_planar):
    fan = cur.surface.vertex_fan(cur.chart, vertex, DevelopedFrame(cur.chart, tuple(cur.offset)))
    alpha0 = fan.coordinate_of(0, -cur.d)
    d_out, corner = fan.direction_at((alpha0 + math.pi) % fan.total)
    cur.chart = corner.chart
    cur.offset = np.asarray(corner.frame.offset, dtype=float)
    cur.p = np.asarray(vertex_planar, dtype=float)
    cur.d = d_out
    cur.s = s_hit


def _next_turn(cur, policy, cone, s_hit):
    if cur.turns:
        th = cur.turns.pop(0)
    else:
        oc = policy.on_cone
        if oc == "raise":
            return None
        th = oc(cur.surface, cone, s_hit) if callable(oc) else float(oc)
    return _reverse_theta(th, cone.total_angle) if cur.flip else float(th)


class _Resume:
    """Continuation token carried by a ConeHit."""

    def __init__(self, cur, fan, alpha0, cone, s_hit, vplan, length, policy, finish):
        self.cur = cur
        self.fan = fan
        self.alpha0 = alpha0
        self.cone = cone
        self.s_hit = s_hit
        self.vplan = vplan
        self.length = length
        self.policy = policy
        self.finish = finish
        self.arrival_corner = (fan.corners[0].chart, fan.corners[0].vertex)
        self.incoming = tuple(cur.d)

    def continue_with(self, theta):
        th = _reverse_theta(theta, self.fan.total) if self.cur.flip else theta
        _apply_turn(self.cur, self.fan, self.alpha0, th, self.cone, self.s_hit, self.vplan)
        _run_ray(self.cur, self.length, self.policy, self.finish)
        return self.finish(self.cur)


def _run_ray(cur, length, policy, finish=None):
    """Advance the cursor until ``length`` is consumed; may raise ConeHit."""
    surface = cur.surface
    guard = 0
    while cur.s < length - TOL:
        guard += 1
        if guard > 2_000_000:
            raise BudgetExceeded("ray exceeded step budget")
        ch = surface.charts[cur.chart]
        pl = cur.p - cur.offset
        t_exit, edge = _exit_time(ch, pl, cur.d)
        remaining = length - cur.s
        vertex = None
        if policy.near_cone != "ignore":
            near = _near_cone_pass(cur, min(t_exit, remaining), policy.snap_tol)
            if near is not None:
                tv, v, cone = near
                if policy.near_cone == "raise":
                    raise NumericalAmbiguity(
                        f"ray passes within {policy.snap_tol:g} of cone {cone.id}",
                        time=(-(cur.s + tv) if cur.flip else cur.s + tv),
                        cone=cone.id,
                    )
                t_exit, edge, vertex = tv, None, v
        if t_exit >= remaining - TOL:
            cur.segments.append(
                Segment(cur.chart, tuple(cur.offset), tuple(cur.p), tuple(cur.d), cur.s, remaining)
            )
            cur.p = cur.p + remaining * cur.d
            cur.s = length
            return cur
        q_planar = cur.p + t_exit * cur.d
        if vertex is None:
            vertex = ch.vertex_of_point(q_planar - cur.offset)
        s_hit = cur.s + t_exit
        cur.segments.append(
            Segment(cur.chart, tuple(cur.offset), tuple(cur.p), tuple(cur.d), cur.s, t_exit)
        )
        if vertex is None:
            nf = develop_across(surface, DevelopedFrame(cur.chart, tuple(cur.offset)), edge)
            cur.chart = nf.chart
            cur.offset = np.asarray(nf.offset, dtype=float)
            cur.p = q_planar
            cur.s = s_hit
            continue
        vplan = cur.offset + ch.vertices[vertex]
        cone = surface.cone_at(cur.chart, vertex)
        if cone is None:
            _flat_pass(cur, vertex, s_hit, vplan)
            continue
        fan = surface.vertex_fan(cur.chart, vertex, DevelopedFrame(cur.chart, tuple(cur.offset)))
        alpha0 = fan.coordinate_of(0, -cur.d)
        turn = _next_turn(cur, policy, cone, s_hit)
        if turn is None:
            raise ConeHit(
                time=(-s_hit if cur.flip else s_hit),
                cone=cone.id,
                continuations=_turn_intervals(fan.total),
                resume=_Resume(cur, fan, alpha0, cone, s_hit, vplan, length, policy,
                               finish or (lambda c: c)),
            )
        _apply_turn(cur, fan, alpha0, turn, cone, s_hit, vplan)
    return cur


def _reverse_ray(surface, cur, anchor=0.0):
    """Map a reversed-time ray to forward-time segments and events at ``anchor``."""
    segs = []
    for s in cur.segments:
        p_end = np.asarray(s.start) + s.dur * np.asarray(s.direction)
        segs.append(
            Segment(
                s.chart,
                s.offset,
                (float(p_end[0]), float(p_end[1])),
                tuple(-np.asarray(s.direction)),
                anchor - (s.t0 + s.dur),
                s.dur,
            )
        )
    segs.reverse()
    evs = [
        ConeEvent(
            anchor - e.time,
            e.cone,
            _reverse_theta(e.theta, surface.cones[e.cone].total_angle),
            e.excess_turn,
        )
        for e in cur.events
    ]
    return segs, evs


def _start_state(surface, start, direction):
    chart = start.chart if isinstance(start, SurfacePoint) else start[0]
    pos = np.asarray(start.position if isinstance(start, SurfacePoint) else start[1], dtype=float)
    ch = surface.charts[chart]
    if not ch.contains(pos, tol=1e-7):
        raise GeometryError(f"start point {tuple(pos)} not in chart {chart}")
    v = ch.vertex_of_point(pos)
    if v is not None and surface.cone_at(chart, v) is not None:
        raise GeometryError("start point is a cone point")
    d = np.asarray(direction, dtype=float)
    n = math.hypot(d[0], d[1])
    if n <= TOL:
        raise GeometryError("zero direction")
    return chart, pos, d / n


# -- public tracing -------------------------------------------------------------


def trace(
    surface,
    start,
    direction,
    window,
    turns_forward=(),
    turns_backward=(),
    policy=DEFAULT_POLICY,
):
    """Trace the unit-speed geodesic through ``start`` over ``window``.

    ``turns_forward`` and ``turns_backward`` are signed turning angles in
    forward-time convention, consumed at successive cone hits (backward ones
    ordered from the hit nearest t=0 outward). A cone met with no available
    turn raises ConeHit when the policy says 'raise'; the exception's resume
    token accepts the missing angle via ``continue_through_cone``.
    """
    a, b = float(window[0]), float(window[1])
    if not (a <= 0.0 <= b):
        raise WindowTooSmall("window must contain the marked time 0")
    chart, pos, d = _start_state(surface, start, direction)
    state = {}

    def assemble(_cur=None):
        bsegs, bevents = _reverse_ray(surface, state["bwd"])
        fcur = state["fwd"]
        segments = bsegs + list(fcur.segments)
        events = bevents + list(fcur.events)
        if not segments:
            raise ConesurfError("empty trace")
        return GeodesicTrace(surface, (a, b), segments, events)

    def run_forward(_cur=None):
        fcur = _RayCursor(surface, chart, (0.0, 0.0), pos, d, turns_forward)
        state["fwd"] = fcur
        if b > 0:
            _run_ray(fcur, b, policy, assemble)
        return assemble()

    bcur = _RayCursor(surface, chart, (0.0, 0.0), pos, -d, turns_backward, flip=True)
    state["bwd"] = bcur
    if a < 0:
        _run_ray(bcur, -a, policy, run_forward)
    return run_forward()


def continue_through_cone(hit, outgoing_turn):
    """Resume a trace interrupted by ConeHit with the given turning angle."""
    if not isinstance(hit, ConeHit):
        raise TypeError("continue_through_cone expects a ConeHit")
    return hit.resume.continue_with(outgoing_turn)


def rebranch_forward(trace_, event, new_theta, turns_tail=(), policy=DEFAULT_POLICY):
    """Copy history up to ``event`` and continue through its cone with a new angle."""
    surface = trace_.surface
    te = event.time
    kept = [s for s in trace_.segments if s.t0 < te - 1e-12]
    if not kept:
        raise GeometryError("no history before the branch event")
    last = kept[-1]
    vplan = np.asarray(last.start) + last.dur * np.asarray(last.direction)
    ch = surface.charts[last.chart]
    vertex = ch.vertex_of_point(vplan - np.asarray(last.offset))
    if vertex is None or surface.cone_at(last.chart, vertex) is None:
        raise GeometryError("branch event does not end at a cone vertex")
    cone = surface.cone_at(last.chart, vertex)
    fan = surface.vertex_fan(last.chart, vertex, DevelopedFrame(last.chart, last.offset))
    alpha0 = fan.coordinate_of(0, -np.asarray(last.direction))
    cur = _RayCursor(surface, last.chart, last.offset, vplan, last.direction, turns_tail)
    _apply_turn(cur, fan, alpha0, new_theta, cone, 0.0, vplan)
    cur.s = 0.0
    _run_ray(cur, trace_.window[1] - te, policy)
    segs = kept + [replace(s, t0=s.t0 + te) for s in cur.segments]
    evs = (
        [e for e in trace_.events if e.time < te - 1e-12]
        + [replace(e, time=e.time + te) for e in cur.events]
    )
    return GeodesicTrace(surface, trace_.window, segs, evs)


def rebranch_backward(trace_, event, new_theta, turns_tail=(), policy=DEFAULT_POLICY):
    """Copy the future from ``event`` on and rebuild the past with a new angle."""
    surface = trace_.surface
    te = event.time
    kept = [s for s in trace_.segments if s.t0 > te - 1e-12]
    if not kept:
        raise GeometryError("no future after the branch event")
    first = kept[0]
    vplan = np.asarray(first.start)
    ch = surface.charts[first.chart]
    vertex = ch.vertex_of_point(vplan - np.asarray(first.offset))
    if vertex is None or surface.cone_at(first.chart, vertex) is None:
        raise GeometryError("branch event does not start at a cone vertex")
    cone = surface.cone_at(first.chart, vertex)
    fan = surface.vertex_fan(first.chart, vertex, DevelopedFrame(first.chart, first.offset))
    d_out = np.asarray(first.direction)
    alpha0 = fan.coordinate_of(0, d_out)  # reversed ray arrives along -d_out
    cur = _RayCursor(surface, first.chart, first.offset, vplan, -d_out, turns_tail, flip=True)
    theta_rev = _reverse_theta(new_theta, cone.total_angle)
    _apply_turn(cur, fan, alpha0, theta_rev, cone, 0.0, vplan)
    cur.s = 0.0
    _run_ray(cur, te - trace_.window[0], policy)
    bsegs, bevents = _reverse_ray(surface, cur, anchor=te)
    bevents = [e for e in bevents if abs(e.time - te) > 1e-12]
    new_event = ConeEvent(te, cone.id, _normalize_theta(new_theta, cone.total_angle),
                          abs(_normalize_theta(new_theta, cone.total_angle)) - math.pi)
    segs = bsegs + kept
    evs = bevents + [new_event] + [e for e in trace_.events if e.time > te + 1e-12]
    return GeodesicTrace(surface, trace_.window, segs, evs)


# -- hyperbolicity proxy ---------------------------------------------------------


def lambda_proxy(trace_, s0=None, window=None, c_floor=1e-3):
    """Window-truncated hyperbolicity proxy: max excess_turn / max(s0, |t|)."""
    surface = trace_.surface
    s0 = surface.s0 if s0 is None else s0
    W = surface.theta0 / (2.0 * c_floor) if window is None else float(window)
    trace_.require_window(-W, W)
    best = 0.0
    for e in trace_.events:
        if -W <= e.time <= W and e.excess_turn > 1e-12:
            best = max(best, e.excess_turn / max(s0, abs(e.time)))
    return best


def lambda_profile(trace_, ts, s0=None, window=None, c_floor=1e-3):
    """Vectorized lambda_proxy(g_t trace) over an array of times."""
    surface = trace_.surface
    s0 = surface.s0 if s0 is None else s0
    W = surface.theta0 / (2.0 * c_floor) if window is None else float(window)
    ts = np.asarray(ts, dtype=float)
    trace_.require_window(ts.min() - W, ts.max() + W)
    ev = [(e.time, e.excess_turn) for e in trace_.events if e.excess_turn > 1e-12]
    if not ev:
        return np.zeros_like(ts)
    et = np.array([t for t, _x in ev])
    ex = np.array([x for _t, x in ev])
    gap = np.abs(et[:, None] - ts[None, :])
    vals = ex[:, None] / np.maximum(s0, gap)
    vals[gap > W] = 0.0
    return vals.max(axis=0)


def is_singular_window(trace_):
    """True iff every cone event in the window turns by exactly +-pi (tol 1e-9)."""
    return all(e.excess_turn <= 1e-9 for e in trace_.events)


# -- unfolding and saddle connections --------------------------------------------


def _interval_contains(lo, width, ang, tol=1e-9):
    gap = (ang - lo) % TWO_PI
    return gap <= width + tol or gap >= TWO_PI - tol


def _interval_intersect(lo1, w1, lo2, w2, tol=1e-9):
    off = (lo2 - lo1) % TWO_PI
    if off > math.pi:
        off -= TWO_PI
    s = max(0.0, off)
    e = min(w1, off + w2)
    if e < s - tol:
        return None
    return ((lo1 + s) % TWO_PI, max(e - s, 0.0))


def _subtended(p0, A, B):
    """Angular interval the segment [A, B] occupies as seen from p0."""
    a1 = math.atan2(A[1] - p0[1], A[0] - p0[0])
    a2 = math.atan2(B[1] - p0[1], B[0] - p0[0])
    w = ((a2 - a1 + math.pi) % TWO_PI) - math.pi
    if w >= 0.0:
        return a1 % TWO_PI, w
    return a2 % TWO_PI, -w


def _segment_distance(p0, A, B):
    e = (B[0] - A[0], B[1] - A[1])
    L2 = e[0] * e[0] + e[1] * e[1]
    t = 0.0 if L2 <= 0 else max(0.0, min(1.0, ((p0[0] - A[0]) * e[0] + (p0[1] - A[1]) * e[1]) / L2))
    return math.hypot(p0[0] - (A[0] + t * e[0]), p0[1] - (A[1] + t * e[1]))


def visible_scan(surface, start_chart, p0, wedge, bound, on_copy, budget=500000):
    """Walk developed copies reachable by straight sight lines from p0.

    ``wedge`` restricts the initial directions: None for a full circle (p0
    interior to the start chart) or an (angle, width) pair for a corner seed.
    ``on_copy(frame, interval)`` is invoked once per visited copy with the
    visibility interval (None means unrestricted).
    """
    p0 = np.asarray(p0, dtype=float)
    stack = [(surface.identity_frame(start_chart), wedge)]
    count = 0
    while stack:
        fr, iv = stack.pop()
        count += 1
        if count > budget:
            raise BudgetExceeded(f"visible-unfolding budget {budget} exceeded")
        on_copy(fr, iv)
        ch = surface.charts[fr.chart]
        off = np.asarray(fr.offset)
        for e in range(ch.n):
            A = ch.vertices[e] + off
            B = ch.vertices[(e + 1) % ch.n] + off
            n = ch.normal_out[e]
            if (A[0] - p0[0]) * n[0] + (A[1] - p0[1]) * n[1] <= 1e-12:
                continue  # p0 not strictly inside this edge: sight exits elsewhere
            if _segment_distance(p0, A, B) > bound + 1e-9:
                continue
            sub = _subtended(p0, A, B)
            niv = sub if iv is None else _interval_intersect(iv[0], iv[1], sub[0], sub[1])
            if niv is None:
                continue
            stack.append((develop_across(surface, fr, e), niv))


def _canonical_fan(surface, cone_id):
    cache = surface.__dict__.setdefault("_canonical_fan_cache", {})
    if cone_id not in cache:
        c, v = min(surface.cones[cone_id].vertex_orbit)
        cache[cone_id] = surface.vertex_fan(c, v)
    return cache[cone_id]


def canonical_fan_coordinate(surface, cone_id, corner, direction):
    """Fan coordinate of a chart-local direction at a corner of a cone class."""
    fan = _canonical_fan(surface, cone_id)
    for k, fc in enumerate(fan.corners):
        if (fc.chart, fc.vertex) == tuple(corner):
            coord = fan.coordinate_of(k, np.asarray(direction, dtype=float)) % fan.total
            if coord > fan.total - 1e-7:
                coord = 0.0
            return coord
    raise GeometryError(f"corner {corner} not in cone class {cone_id}")


@dataclass(frozen=True)
class OrientedConnection:
    start_cone: int
    end_cone: int
    start_corner: tuple  # (chart, vertex)
    direction: tuple  # chart-local unit vector at departure
    length: float
    end_corner: tuple
    end_back_direction: tuple  # chart-local unit vector pointing back along the ray
    dep_coord: float  # canonical fan coordinate of departure direction
    arr_coord: float  # canonical fan coordinate of the back direction at arrival


@dataclass(frozen=True)
class SaddleConnection:
    start_cone: int
    end_cone: int
    holonomy: tuple
    length: float
    oriented: tuple  # one or two OrientedConnection records


def _in_corner_wedge(surface, chart, vertex, u, tol=1e-9):
    ch = surface.charts[chart]
    width = ch.interior_angle(vertex)
    a0 = math.atan2(ch.edge_vec[vertex][1], ch.edge_vec[vertex][0])
    gap = (math.atan2(u[1], u[0]) - a0) % TWO_PI
    if gap > TWO_PI - tol:
        gap = 0.0
    return gap <= width + tol


def _verify_cone_ray(surface, chart, vertex, u, dist):
    """Trace from a cone vertex along u; return the ConeHit if it is the first hit."""
    p0 = surface.charts[chart].vertices[vertex]
    cur = _RayCursor(surface, chart, (0.0, 0.0), p0, u, ())
    try:
        _run_ray(cur, dist + max(1e-6, 1e-7 * dist), ConePolicy(near_cone="snap"))
    except ConeHit as hit:
        if abs(hit.time - dist) <= 1e-7 * max(1.0, dist):
            return hit
        return None
    except NumericalAmbiguity:
        return None
    return None


def saddle_connections(surface, length_bound, chart_budget=500000):
    """All cone-to-cone straight segments of length <= length_bound.

    Found by visibility-pruned unfolding from every cone corner and
    deduplicated by endpoints and holonomy: one SaddleConnection per
    unoriented segment, carrying its oriented records.
    """
    if length_bound <= 0:
        raise GeometryError("length_bound must be positive")
    oriented = {}
    for cone in surface.cones:
        for (c, v) in cone.vertex_orbit:
            ch = surface.charts[c]
            p0 = ch.vertices[v]
            wedge = (
                math.atan2(ch.edge_vec[v][1], ch.edge_vec[v][0]) % TWO_PI,
                ch.interior_angle(v),
            )
            best_by_dir = {}

            def on_copy(fr, iv, _p0=p0, _best=best_by_dir):
                ch2 = surface.charts[fr.chart]
                off = np.asarray(fr.offset)
                for v2 in range(ch2.n):
                    cone2 = surface.cone_at(fr.chart, v2)
                    if cone2 is None:
                        continue
                    w = ch2.vertices[v2] + off
                    dx, dy = w[0] - _p0[0], w[1] - _p0[1]
                    dist = math.hypot(dx, dy)
                    if dist <= TOL or dist > length_bound + 1e-9:
                        continue
                    ang = math.atan2(dy, dx)
                    if iv is not None and not _interval_contains(iv[0], iv[1], ang):
                        continue
                    u = np.array([dx / dist, dy / dist])
                    if not _in_corner_wedge(surface, fr.chart, v2, -u):
                        continue  # coinciding vertex of an overlapping copy
                    key = round(ang % TWO_PI, 9)
                    cand = (dist, u, cone2, (fr.chart, v2))
                    if key not in _best or dist < _best[key][0] - 1e-9 or (
                        abs(dist - _best[key][0]) <= 1e-9 and cand[3] < _best[key][3]
                    ):
                        _best[key] = cand

            visible_scan(surface, c, p0, wedge, length_bound, on_copy, chart_budget)
            for dist, u, cone2, end_corner in best_by_dir.values():
                back = (float(-u[0]), float(-u[1]))
                dep = canonical_fan_coordinate(surface, cone.id, (c, v), u)
                arr = canonical_fan_coordinate(surface, cone2.id, end_corner, back)
                rec = OrientedConnection(
                    start_cone=cone.id,
                    end_cone=cone2.id,
                    start_corner=(c, v),
                    direction=(float(u[0]), float(u[1])),
                    length=float(dist),
                    end_corner=end_corner,
                    end_back_direction=back,
                    dep_coord=float(dep),
                    arr_coord=float(arr),
                )
                oriented.setdefault((cone.id, round(dep, 6)), rec)
    # pair orientations into unoriented connections
    out = []
    used = set()
    items = sorted(oriented.items())
    index = {k: r for k, r in items}
    for key, rec in items:
        if key in used:
            continue
        rev_key = (rec.end_cone, round(rec.arr_coord, 6))
        pair = index.get(rev_key)
        used.add(key)
        members = [rec]
        if pair is not None and rev_key != key:
            used.add(rev_key)
            members.append(pair)
        hol = np.asarray(rec.direction) * rec.length
        if hol[1] < -TOL or (abs(hol[1]) <= TOL and hol[0] < 0):
            hol = -hol
        out.append(
            SaddleConnection(
                start_cone=min(rec.start_cone, rec.end_cone),
                end_cone=max(rec.start_cone, rec.end_cone),
                holonomy=(float(hol[0]), float(hol[1])),
                length=rec.length,
                oriented=tuple(members),
            )
        )
    out.sort(key=lambda s: (s.length, s.holonomy))
    return out


def oriented_connections(surface, length_bound, chart_budget=20000):
    recs = []
    for sc in saddle_connections(surface, length_bound, chart_budget):
        recs.extend(sc.oriented)
    recs.sort(key=lambda r: (r.start_cone, r.dep_coord))
    return recs


def junction_turn(surface, arriving, departing, tol=1e-9):
    """Signed turning angle when ``departing`` follows ``arriving``, or None."""
    if arriving.end_cone != departing.start_cone:
        return None
    total = surface.cones[arriving.end_cone].total_angle
    ex = total - TWO_PI
    tau = (departing.dep_coord - arriving.arr_coord - math.pi) % total
    if tau >= total - tol:
        tau = 0.0
    if tau > ex + tol:
        return None
    return _theta_from_tau(min(tau, ex), total)


# -- closed geodesics -------------------------------------------------------------


@dataclass(frozen=True)
class ClosedGeodesic:
    kind: str  # 'chain' or 'cylinder'
    length: float
    is_singular: bool
    legs: tuple  # OrientedConnection records (chain) or () for cylinders
    turns: tuple  # junction turning angles, aligned with legs
    base_point: SurfacePoint
    base_direction: tuple  # chart-local direction at the base point
    signature: tuple


def _canonical_rotation(word):
    k = len(word)
    rots = [tuple(word[i:] + word[:i]) for i in range(k)]
    return min(rots)


def _is_primitive(word):
    k = len(word)
    for p in range(1, k):
        if k % p == 0 and word == word[p:] + word[:p]:
            return False
    return True


def _chain_base(surface, legs):
    """Base point = midpoint of the first leg, with its chart-local direction."""
    lead = legs[0]
    c, v = lead.start_corner
    p0 = surface.charts[c].vertices[v]
    cur = _RayCursor(surface, c, (0.0, 0.0), p0, np.asarray(lead.direction), ())
    _run_ray(cur, 0.5 * lead.length, ConePolicy(near_cone="ignore"))
    chart, local = cur.chart, cur.p - cur.offset
    return SurfacePoint(int(chart), (float(local[0]), float(local[1]))), tuple(cur.d)


def _close_up_error(surface, base, direction, turns, period):
    """Re-trace one period from the base point; distance/angle mismatch at closure."""
    cur = _RayCursor(
        surface, base.chart, (0.0, 0.0), base.as_array(), np.asarray(direction), list(turns)
    )
    try:
        _run_ray(cur, period, ConePolicy(near_cone="snap"))
    except (ConeHit, NumericalAmbiguity, NotGeodesic):
        return math.inf
    c1, p1 = surface.canonical_point(cur.chart, cur.p - cur.offset)
    c0, p0 = surface.canonical_point(base.chart, base.as_array())
    if c0 != c1:
        return math.inf
    return float(np.hypot(*(p1 - p0)) + np.hypot(*(cur.d - np.asarray(direction))))


def _chain_cycles(surface, recs, length_bound, max_events):
    adj = [[] for _ in recs]
    for i, a in enumerate(recs):
        for j, b in enumerate(recs):
            th = junction_turn(surface, a, b)
            if th is not None:
                adj[i].append((j, th))
    min_len = min((r.length for r in recs), default=math.inf)
    seen = set()
    cycles = []

    def dfs(s, node, word, turns, used):
        for j, th in adj[node]:
            if j < s:
                continue
            if j == s:
                w = tuple(word)
                t = tuple(turns + [th])
                if sum(recs[i].length for i in w) <= length_bound and _is_primitive(list(w)):
                    canon = _canonical_rotation(list(w))
                    if canon not in seen:
                        seen.add(canon)
                        cycles.append((w, t))
            nl = used + recs[j].length
            if len(word) + 1 <= max_events and nl <= length_bound:
                dfs(s, j, word + [j], turns + [th], nl)

    for s in range(len(recs)):
        if recs[s].length <= length_bound:
            dfs(s, s, [s], [], recs[s].length)
    return cycles


def _cylinders(surface, recs, cycles, length_bound):
    """Cylinder cores found by pushing off all-straight boundary chains."""
    out = {}
    probe = 1e-4 * min(ch.diameter for ch in surface.charts)
    for word, turns in cycles:
        kinds = {round(t, 9) for t in turns}
        if kinds not in ({round(math.pi, 9)}, {round(-math.pi, 9)}):
            continue
        # theta = +pi leaves a flat angle pi on the traveler's right side
        side = -1.0 if abs(turns[0] - math.pi) < 1e-9 else 1.0
        legs = [recs[i] for i in word]
        circ = sum(l.length for l in legs)
        if circ > length_bound:
            continue
        base, d = _chain_base(surface, legs)
        n = side * np.array([-d[1], d[0]])
        p = base.as_array() + probe * n
        chart = base.chart
        if not surface.charts[chart].contains(p):
            e = surface.charts[chart].edge_of_point(base.as_array())
            if e is None:
                continue
            c2, _e2, t = surface.glue(chart, e)
            chart, p = c2, p + t
            if not surface.charts[chart].contains(p):
                continue
        try:
            cur = _RayCursor(surface, chart, (0.0, 0.0), p, np.asarray(d), ())
            _run_ray(cur, circ, ConePolicy())
        except (ConeHit, NumericalAmbiguity):
            continue
        c1, p1 = surface.canonical_point(cur.chart, cur.p - cur.offset)
        c0, p0 = surface.canonical_point(chart, p)
        if c1 != c0 or np.hypot(*(p1 - p0)) > 1e-7 or np.hypot(*(cur.d - np.asarray(d))) > 1e-9:
            continue
        ang = math.atan2(d[1], d[0]) % math.pi
        witness = SurfacePoint(int(chart), (float(p[0]), float(p[1])))
        charts_seen = frozenset(int(s.chart) for s in cur.segments)
        key = (round(ang, 7), round(circ, 7), charts_seen)
        if key not in out:
            out[key] = ClosedGeodesic(
                kind="cylinder",
                length=float(circ),
                is_singular=True,
                legs=(),
                turns=(),
                base_point=witness,
                base_direction=(float(d[0]), float(d[1])),
                signature=("cyl",) + key[:2],
            )
    return list(out.values())


def closed_geodesics(surface, length_bound, max_events, chart_budget=20000):
    """Closed geodesics of length <= length_bound, as saddle-connection chains
    (at most max_events junctions per period) plus cylinder-core representatives."""
    if length_bound <= 0 or max_events <= 0:
        raise GeometryError("bounds must be positive")
    recs = oriented_connections(surface, length_bound, chart_budget)
    cycles = _chain_cycles(surface, recs, length_bound, max_events)
    out = []
    for word, turns in cycles:
        legs = tuple(recs[i] for i in word)
        base, d = _chain_base(surface, legs)
        period = sum(l.length for l in legs)
        if _close_up_error(surface, base, d, turns, period) > 1e-7:
            continue
        out.append(
            ClosedGeodesic(
                kind="chain",
                length=float(period),
                is_singular=all(abs(abs(t) - math.pi) <= 1e-9 for t in turns),
                legs=legs,
                turns=tuple(float(t) for t in turns),
                base_point=base,
                base_direction=d,
                signature=("chain",) + _canonical_rotation(
                    [round(l.dep_coord, 6) for l in legs]
                ),
            )
        )
    out.extend(_cylinders(surface, recs, cycles, length_bound))
    out.sort(key=lambda cg: (cg.length, cg.signature))
    return out


def trace_closed(surface, cg, window, phase=0.0):
    """Periodic trace of a closed geodesic with marked time 0 at ``phase``.

    phase is measured along the orbit from the closed geodesic's base point.
    """
    a, b = float(window[0]), float(window[1])
    T = cg.length
    turns = list(cg.turns)
    cur = _RayCursor(
        surface,
        cg.base_point.chart,
        (0.0, 0.0),
        cg.base_point.as_array(),
        np.asarray(cg.base_direction),
        turns,
        flip=False,
    )
    _run_ray(cur, T, ConePolicy(near_cone="ignore"))
    H = cur.p - cg.base_point.as_array()  # developed translation of one period
    template_segs = cur.segments
    template_evs = cur.events
    k_lo = math.floor((a + phase) / T)
    k_hi = math.ceil((b + phase) / T)
    segs, evs = [], []
    for k in range(k_lo, k_hi + 1):
        dt = k * T - phase
        shift = k * H
        for s in template_segs:
            t0 = s.t0 + dt
            if t0 + s.dur < a - 1e-12 or t0 > b + 1e-12:
                continue
            segs.append(
                Segment(
                    s.chart,
                    (s.offset[0] + shift[0], s.offset[1] + shift[1]),
                    (s.start[0] + shift[0], s.start[1] + shift[1]),
                    s.direction,
                    t0,
                    s.dur,
                )
            )
        for e in template_evs:
            t = e.time + dt
            if a - 1e-12 <= t <= b + 1e-12:
                evs.append(replace(e, time=t))
    segs.sort(key=lambda s: s.t0)
    return GeodesicTrace(surface, (a, b), segs, evs, period=T)
